"""Main entry point for the robustification experiments."""

import argparse
import logging
import sys
from typing import Callable, Dict, List, Optional

from src import setup_logging
from src.config import ExperimentConfig, add_config_flags, config_from_args
from src.constants import EXIT_OK
from src.errors import ConfigError, PreemptError
from src.pipeline import Experiment
from src.selftest import run_selftest

Command = Callable[[ExperimentConfig], None]


def _gen_data(cfg: ExperimentConfig) -> None:
    Experiment(cfg).gen_data()


def _train(cfg: ExperimentConfig) -> None:
    Experiment(cfg).train_models()


def _robustify(cfg: ExperimentConfig) -> None:
    Experiment(cfg).robustify_test_set()


def _attack(cfg: ExperimentConfig) -> None:
    Experiment(cfg).attack()


def _whitebox(cfg: ExperimentConfig) -> None:
    Experiment(cfg).whitebox()


def _smooth_certify(cfg: ExperimentConfig) -> None:
    Experiment(cfg).smooth_certify()


def _report(cfg: ExperimentConfig) -> None:
    Experiment(cfg).run()


def _selftest(cfg: ExperimentConfig) -> None:
    run_selftest(cfg.seed, cfg.get("output", "dir"))


COMMANDS: Dict[str, Command] = {
    "gen-data": _gen_data,
    "train": _train,
    "robustify": _robustify,
    "attack": _attack,
    "whitebox": _whitebox,
    "smooth-certify": _smooth_certify,
    "report": _report,
    "selftest": _selftest,
}

HELP = {
    "gen-data": "generate the toy dataset and save it as .npz",
    "train": "train every configured (norm, mode) model",
    "robustify": "robustify the evaluation images and store them with the dataset",
    "attack": "grey-box accuracy table",
    "whitebox": "accuracy table including the white-box adversary",
    "smooth-certify": "certify and attack the smoothed classifier",
    "report": "full pipeline: train, evaluate, smoothing, all CSVs",
    "selftest": "acceptance checks on a fixed small configuration",
}


def build_parser() -> argparse.ArgumentParser:
    """Command-line parser with one subcommand per pipeline stage."""
    parser = argparse.ArgumentParser(description="Preemptive robustification experiments")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub = subparsers.add_parser(name, help=HELP[name])
        sub.add_argument(
            "--minimal", action="store_true", help="minimal logging (good for overnight runs)"
        )
        add_config_flags(sub)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand and return its exit code."""
    args = build_parser().parse_args(argv)
    setup_logging(minimal=args.minimal)
    logger = logging.getLogger(__name__)
    try:
        cfg = config_from_args(args)
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        logger.error("Configuration error: %s", exc)
        return exc.exit_code
    except PreemptError as exc:
        logger.error("%s aborted: %s", args.command, exc)
        return exc.exit_code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
