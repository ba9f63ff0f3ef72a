"""Test package initialization.""" 