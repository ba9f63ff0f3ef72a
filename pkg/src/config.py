"""Experiment configuration.

This module contains the ExperimentConfig class that handles:
- Reading the INI-style experiment file with strict key checking
- Command-line overrides mirroring every key as --<section>-<key>
- Building the typed hyperparameter bundles used by the pipeline

Errors carry the offending line of the file when there is one.
"""

import argparse
import configparser
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Tuple, Union

from .constants import (
    BATCH_SIZE,
    EPOCHS,
    EPS_PRIME_FRACTIONS,
    EVAL_RESTARTS,
    GAUSS2_STD,
    INNER_MAX_STEPS,
    INNER_MIN_STEPS,
    LEARNING_RATE,
    MAX_ITER,
    MOMENTUM,
    N_SAMPLES,
    OUTPUT_DIR,
    PGD_STEPS,
    SMOOTH_CONF_ALPHA,
    SMOOTH_M,
    SMOOTH_N_CERT,
    SMOOTH_N_PRED,
    SMOOTH_SIGMA,
    SOUNDNESS_ATTACKS,
    WEIGHT_DECAY,
)
from .errors import ConfigError
from .preempt_types import (
    GRAD_MODES,
    INIT_MODES,
    OPTIMIZERS,
    TRAIN_MODES,
    PerturbSpec,
    PgdConfig,
    RobustifyConfig,
    SmoothConfig,
    TrainConfig,
    WhiteboxConfig,
    norm_label,
    parse_norm,
)
from .seeding import resolve_seed

logger = logging.getLogger(__name__)

Parser = Callable[[str], Any]


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise ValueError(f"expected an integer >= 1, got {value}")
    return value


def _count(text: str) -> int:
    value = int(text)
    if value < 0:
        raise ValueError(f"expected an integer >= 0, got {value}")
    return value


def _nonneg_float(text: str) -> float:
    value = float(text)
    if not value >= 0 or math.isinf(value):
        raise ValueError(f"expected a finite number >= 0, got {text}")
    return value


def _positive_float(text: str) -> float:
    value = _nonneg_float(text)
    if value == 0:
        raise ValueError("expected a number > 0")
    return value


def _optional_positive_float(text: str) -> Optional[float]:
    return None if not text.strip() else _positive_float(text)


def _optional_nonneg_float(text: str) -> Optional[float]:
    return None if not text.strip() else _nonneg_float(text)


def _probability(text: str) -> float:
    value = float(text)
    if not 0 < value < 1:
        raise ValueError(f"expected a value in (0, 1), got {value}")
    return value


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _choice(*options: str) -> Parser:
    def parse(text: str) -> str:
        value = text.strip()
        if value not in options:
            raise ValueError(f"expected one of {options}, got {value!r}")
        return value

    return parse


def _list(item: Parser) -> Parser:
    def parse(text: str) -> Tuple[Any, ...]:
        return tuple(item(part) for part in text.split(",") if part.strip())

    return parse


def _norms(text: str) -> Tuple[float, ...]:
    norms = _list(parse_norm)(text)
    if not norms:
        raise ValueError("at least one norm is required")
    return norms  # type: ignore[no-any-return]


class Key(NamedTuple):
    """One configuration key: parser and default text."""

    parse: Parser
    default: str


SCHEMA: Dict[str, Dict[str, Key]] = {
    "run": {
        "seed": Key(_count, "0"),
        "n_eval": Key(_count, "100"),
    },
    "data": {
        "kind": Key(_choice("gauss2", "rings", "bars"), "gauss2"),
        "n_per_class": Key(_count, "1000"),
        "dim": Key(_positive_int, "8"),
        "std": Key(_nonneg_float, str(GAUSS2_STD)),
        "path": Key(str, ""),
    },
    "model": {
        "hidden": Key(_list(_positive_int), "32"),
        "activation": Key(_choice("relu", "tanh"), "relu"),
        "path": Key(str, ""),
        "modes": Key(_list(_choice(*TRAIN_MODES)), "adversarial, preempt_robust"),
    },
    "train": {
        "epochs": Key(_count, str(EPOCHS)),
        "inner_min_steps": Key(_count, str(INNER_MIN_STEPS)),
        "inner_max_steps": Key(_count, str(INNER_MAX_STEPS)),
        "lr": Key(_nonneg_float, str(LEARNING_RATE)),
        "batch_size": Key(_positive_int, str(BATCH_SIZE)),
        "momentum": Key(_nonneg_float, str(MOMENTUM)),
        "weight_decay": Key(_nonneg_float, str(WEIGHT_DECAY)),
        "beta": Key(_optional_positive_float, ""),
        "lr_decay_epochs": Key(_list(_positive_int), ""),
    },
    "perturb": {
        "norms": Key(_norms, "inf"),
        "eps_inf": Key(_positive_float, "0.1"),
        "eps_l2": Key(_positive_float, "0.5"),
        "delta": Key(_optional_nonneg_float, ""),
        "delta_override": Key(_bool, "false"),
    },
    "robustify": {
        "max_iter": Key(_count, str(MAX_ITER)),
        "steps": Key(_count, str(PGD_STEPS)),
        "n_samples": Key(_positive_int, str(N_SAMPLES)),
        "lr": Key(_optional_positive_float, ""),
        "init_mode": Key(_choice(*INIT_MODES), "at_original"),
        "optimizer": Key(_choice(*OPTIMIZERS), "projected_gd"),
        "grad_mode": Key(_choice(*GRAD_MODES), "first_order"),
    },
    "attack": {
        "steps": Key(_count, str(PGD_STEPS)),
        "restarts": Key(_positive_int, str(EVAL_RESTARTS)),
        "eps_prime_fractions": Key(
            _list(_positive_float), ", ".join(str(f) for f in EPS_PRIME_FRACTIONS)
        ),
    },
    "smooth": {
        "enabled": Key(_bool, "false"),
        "sigma": Key(_nonneg_float, str(SMOOTH_SIGMA)),
        "n_pred": Key(_positive_int, str(SMOOTH_N_PRED)),
        "n_cert": Key(_positive_int, str(SMOOTH_N_CERT)),
        "m": Key(_positive_int, str(SMOOTH_M)),
        "conf_alpha": Key(_probability, str(SMOOTH_CONF_ALPHA)),
        "soundness_attacks": Key(_count, str(SOUNDNESS_ATTACKS)),
        "n_eval": Key(_count, "20"),
    },
    "output": {
        "dir": Key(str, OUTPUT_DIR),
    },
}

# Written into run snapshots; ignored when a snapshot is loaded back
SNAPSHOT_METADATA = "metadata"

_KEY_LINE = re.compile(r"^\s*([^=:#;\[\s][^=:]*?)\s*[=:]")
_SECTION_LINE = re.compile(r"^\s*\[([^\]]+)\]")

Overrides = Dict[Tuple[str, str], str]


def _locate_keys(text: str) -> Dict[Tuple[str, str], int]:
    """Line number of every section header and key in the file."""
    lines: Dict[Tuple[str, str], int] = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        header = _SECTION_LINE.match(raw)
        if header:
            section = header.group(1).strip()
            lines[(section, "")] = lineno
            continue
        key = _KEY_LINE.match(raw)
        if key and section:
            lines[(section, key.group(1).strip().lower())] = lineno
    return lines


def _read_file(
    path: Union[str, Path]
) -> Tuple[Dict[str, Dict[str, str]], Dict[Tuple[str, str], int]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    parser = configparser.ConfigParser(strict=True, interpolation=None)
    try:
        parser.read_string(text, source=str(path))
    except (configparser.DuplicateSectionError, configparser.DuplicateOptionError) as exc:
        raise ConfigError(exc.message, exc.lineno) from exc
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside of any [section]", exc.lineno) from exc
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError(f"unparsable line in {path}", lineno) from exc
    lines = _locate_keys(text)
    raw: Dict[str, Dict[str, str]] = {}
    for section in parser.sections():
        if section == SNAPSHOT_METADATA:
            continue
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", lines.get((section, "")))
        raw[section] = {}
        for key, value in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", lines.get((section, key)))
            raw[section][key] = value
    return raw, lines


@dataclass
class ExperimentConfig:
    """Parsed experiment settings.

    values holds the typed value of every schema key; text holds the string
    each came from, so the snapshot re-creates the run exactly.
    """

    values: Dict[str, Dict[str, Any]]
    text: Dict[str, Dict[str, str]]
    seed: int = 0
    source: Optional[str] = None
    metadata: Dict[str, str] = field(default_factory=dict)

    def get(self, section: str, key: str) -> Any:
        """Typed value of one key."""
        return self.values[section][key]

    def snapshot(self) -> Dict[str, Dict[str, str]]:
        """Every key as text, with the resolved root seed."""
        snap = {section: dict(keys) for section, keys in self.text.items()}
        snap["run"]["seed"] = str(self.seed)
        return snap

    def eps_for(self, p: float) -> float:
        """Configured budget for a norm order."""
        return float(self.get("perturb", "eps_inf" if math.isinf(p) else "eps_l2"))

    def perturb_specs(self) -> List[PerturbSpec]:
        """One spec per configured norm; delta defaults to eps."""
        delta = self.get("perturb", "delta")
        return [PerturbSpec(p, self.eps_for(p), delta) for p in self.get("perturb", "norms")]

    def robustify_config(self) -> RobustifyConfig:
        """Defender loop settings."""
        return RobustifyConfig(
            max_iter=self.get("robustify", "max_iter"),
            inner=PgdConfig(steps=self.get("robustify", "steps")),
            n_samples=self.get("robustify", "n_samples"),
            lr=self.get("robustify", "lr"),
            init_mode=self.get("robustify", "init_mode"),
            optimizer=self.get("robustify", "optimizer"),
            grad_mode=self.get("robustify", "grad_mode"),
        )

    def pgd_config(self, restarts: int = 1) -> PgdConfig:
        """Evaluation attack settings."""
        return PgdConfig(steps=self.get("attack", "steps"), restarts=restarts)

    def whitebox_config(self, spec: PerturbSpec) -> WhiteboxConfig:
        """White-box adversary settings; it reuses the defender's loop settings."""
        fractions = self.get("attack", "eps_prime_fractions")
        return WhiteboxConfig(
            recon=self.robustify_config(),
            attack=self.pgd_config(self.get("attack", "restarts")),
            eps_prime_grid=tuple(f * spec.eps for f in fractions),
        )

    def train_config(self, spec: PerturbSpec, mode: str) -> TrainConfig:
        """Training settings for one mode."""
        return TrainConfig(
            spec=spec,
            epochs=self.get("train", "epochs"),
            inner_min_steps=self.get("train", "inner_min_steps"),
            inner_max_steps=self.get("train", "inner_max_steps"),
            lr=self.get("train", "lr"),
            batch_size=self.get("train", "batch_size"),
            mode=mode,
            beta=self.get("train", "beta"),
            momentum=self.get("train", "momentum"),
            weight_decay=self.get("train", "weight_decay"),
            lr_decay_epochs=self.get("train", "lr_decay_epochs"),
        )

    def smooth_config(self) -> SmoothConfig:
        """Randomized smoothing settings."""
        return SmoothConfig(
            sigma=self.get("smooth", "sigma"),
            n_pred=self.get("smooth", "n_pred"),
            n_cert=self.get("smooth", "n_cert"),
            M=self.get("smooth", "m"),
            conf_alpha=self.get("smooth", "conf_alpha"),
        )


def load_config(
    path: Optional[Union[str, Path]] = None, overrides: Optional[Overrides] = None
) -> ExperimentConfig:
    """Merge defaults, the config file and command-line overrides.

    Args:
        path: INI file; defaults only when None
        overrides: (section, key) -> text from command-line flags

    Returns:
        Validated ExperimentConfig

    Raises:
        ConfigError: Unknown key, bad value, or delta != eps without override
    """
    file_values: Dict[str, Dict[str, str]] = {}
    lines: Dict[Tuple[str, str], int] = {}
    if path is not None:
        file_values, lines = _read_file(path)

    text: Dict[str, Dict[str, str]] = {}
    values: Dict[str, Dict[str, Any]] = {}
    for section, keys in SCHEMA.items():
        text[section], values[section] = {}, {}
        for key, spec in keys.items():
            raw, origin = spec.default, "default"
            line: Optional[int] = None
            if key in file_values.get(section, {}):
                raw, line = file_values[section][key], lines.get((section, key))
            if overrides and (section, key) in overrides:
                raw, line = overrides[(section, key)], None
                origin = f"--{section}-{key.replace('_', '-')}"
            try:
                values[section][key] = spec.parse(raw)
            except ValueError as exc:
                where = "" if line is not None else f" ({origin})"
                raise ConfigError(f"[{section}] {key} = {raw!r}{where}: {exc}", line) from exc
            text[section][key] = raw.strip()

    for fraction in values["attack"]["eps_prime_fractions"]:
        if fraction > 1:
            raise ConfigError(
                f"eps_prime_fractions must be <= 1, got {fraction}",
                lines.get(("attack", "eps_prime_fractions")),
            )
    delta = values["perturb"]["delta"]
    if delta is not None and not values["perturb"]["delta_override"]:
        for p in values["perturb"]["norms"]:
            eps = values["perturb"]["eps_inf" if math.isinf(p) else "eps_l2"]
            if delta != eps:
                raise ConfigError(
                    f"delta {delta} differs from eps {eps} for p={norm_label(p)}; "
                    "set delta_override = true to allow it",
                    lines.get(("perturb", "delta")),
                )

    seed = resolve_seed(values["run"]["seed"])
    logger.info("Loaded configuration from %s (seed %d)", path or "defaults", seed)
    return ExperimentConfig(values, text, seed, str(path) if path is not None else None)


def add_config_flags(parser: argparse.ArgumentParser) -> None:
    """Add --config and one --<section>-<key> flag per schema key."""
    parser.add_argument("--config", default=None, help="experiment config file")
    for section, keys in SCHEMA.items():
        group = parser.add_argument_group(f"[{section}]")
        for key, spec in keys.items():
            group.add_argument(
                f"--{section}-{key.replace('_', '-')}",
                dest=f"{section}__{key}",
                default=None,
                metavar="VALUE",
                help=f"default: {spec.default or '(unset)'}",
            )


def overrides_from_args(args: argparse.Namespace) -> Overrides:
    """Collect the config flags that were given on the command line."""
    found: Overrides = {}
    for name, value in vars(args).items():
        if "__" in name and value is not None:
            section, key = name.split("__", 1)
            found[(section, key)] = str(value)
    return found


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    """Load the config named by --config with flag overrides applied."""
    return load_config(args.config, overrides_from_args(args))
