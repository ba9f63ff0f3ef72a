"""Preemptive robustification package."""

import logging
import os
from datetime import datetime

from .classifier import Classifier
from .config import ExperimentConfig, load_config
from .constants import LOG_DIR
from .errors import PreemptError
from .pipeline import Experiment, run_pipeline
from .preempt import robustify
from .whitebox import whitebox_attack


def setup_logging(minimal: bool = False, log_dir: str = LOG_DIR) -> logging.Logger:
    """Configure logging for the command-line tools.

    Args:
        minimal: If True, only log warnings and errors to file but keep progress on screen
        log_dir: Directory for log files (created if missing)
    """
    os.makedirs(log_dir, exist_ok=True)
    formatter = logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")

    if minimal:
        # One file shared by long unattended runs
        file_handler = logging.FileHandler(os.path.join(log_dir, "preempt_minimal.log"))
        file_handler.setLevel(logging.WARNING)
    else:
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        file_handler = logging.FileHandler(os.path.join(log_dir, f"preempt_{timestamp}.log"))
        file_handler.setLevel(logging.DEBUG)
    file_handler.setFormatter(formatter)

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(formatter)
    console_handler.setLevel(logging.INFO)

    root_logger = logging.getLogger()
    root_logger.setLevel(logging.DEBUG)
    root_logger.addHandler(file_handler)
    root_logger.addHandler(console_handler)
    return root_logger


__all__ = [
    "Classifier",
    "Experiment",
    "ExperimentConfig",
    "PreemptError",
    "load_config",
    "robustify",
    "run_pipeline",
    "setup_logging",
    "whitebox_attack",
]
