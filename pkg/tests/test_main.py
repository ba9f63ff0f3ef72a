"""Test suite for the command-line entry point."""

import logging
from pathlib import Path
from typing import Iterator

import pytest

from main import build_parser, main
from src.constants import EXIT_CONFIG, EXIT_OK, SEED_ENV_VAR


@pytest.fixture(autouse=True)
def isolated(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> Iterator[None]:
    """Create an isolated working directory and logging state for tests."""
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(SEED_ENV_VAR, raising=False)
    root = logging.getLogger()
    handlers = list(root.handlers)
    level = root.level
    yield
    for handler in root.handlers:
        if handler not in handlers:
            handler.close()
    root.handlers = handlers
    root.setLevel(level)


def test_every_stage_has_a_subcommand() -> None:
    """Test the parser knows every pipeline stage."""
    parser = build_parser()
    for name in ("gen-data", "train", "robustify", "attack", "whitebox", "smooth-certify", "report", "selftest"):
        args = parser.parse_args([name])
        assert args.command == name


def test_missing_config_exits_with_config_code(tmp_path: Path) -> None:
    """Test an unreadable config file maps to the configuration exit code."""
    assert main(["attack", "--config", str(tmp_path / "absent.ini")]) == EXIT_CONFIG


def test_bad_flag_exits_with_config_code() -> None:
    """Test an invalid flag value maps to the configuration exit code."""
    assert main(["train", "--train-epochs", "-1"]) == EXIT_CONFIG


def test_gen_data_writes_dataset(tmp_path: Path) -> None:
    """Test the gen-data stage succeeds and writes the archive and a log file."""
    out = tmp_path / "out"
    code = main(["gen-data", "--data-n-per-class", "5", "--output-dir", str(out)])
    assert code == EXIT_OK
    assert (out / "dataset.npz").exists()
    assert any((tmp_path / "logs").glob("preempt_*.log"))
