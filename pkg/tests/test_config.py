"""Test suite for experiment configuration."""

import argparse
import math
from pathlib import Path

import pytest

from src.config import add_config_flags, config_from_args, load_config
from src.constants import SEED_ENV_VAR
from src.errors import ConfigError
from src.preempt_types import EvalReport
from src.report import emit_report


@pytest.fixture(autouse=True)
def no_seed_env(monkeypatch: pytest.MonkeyPatch) -> None:
    """Create a clean seed environment for every test."""
    monkeypatch.delenv(SEED_ENV_VAR, raising=False)


def _write(tmp_path: Path, text: str) -> Path:
    path = tmp_path / "experiment.ini"
    path.write_text(text, encoding="utf-8")
    return path


def test_defaults() -> None:
    """Test the built-in defaults."""
    cfg = load_config()
    assert cfg.seed == 0
    assert cfg.get("perturb", "norms") == (math.inf,)
    assert cfg.get("model", "modes") == ("adversarial", "preempt_robust")
    specs = cfg.perturb_specs()
    assert len(specs) == 1
    assert specs[0].eps == pytest.approx(0.1)
    assert specs[0].budget == pytest.approx(0.1)
    assert cfg.robustify_config().max_iter == 100
    assert cfg.pgd_config().restarts == 1


def test_file_values(tmp_path: Path) -> None:
    """Test values from the file replace defaults."""
    path = _write(
        tmp_path,
        "[run]\nseed = 7\n\n[perturb]\nnorms = inf, 2\neps_l2 = 0.3\n\n[train]\nepochs = 3\n",
    )
    cfg = load_config(path)
    assert cfg.seed == 7
    assert [spec.p for spec in cfg.perturb_specs()] == [math.inf, 2.0]
    assert cfg.eps_for(2.0) == pytest.approx(0.3)
    assert cfg.get("train", "epochs") == 3
    assert cfg.source == str(path)


def test_unknown_key_reports_line(tmp_path: Path) -> None:
    """Test an unknown key names its line."""
    path = _write(tmp_path, "[run]\nseed = 1\n\n[perturb]\nbogus = 3\n")
    with pytest.raises(ConfigError) as excinfo:
        load_config(path)
    assert excinfo.value.line == 5
    assert "bogus" in str(excinfo.value)


def test_unknown_section_reports_line(tmp_path: Path) -> None:
    """Test an unknown section names its header line."""
    path = _write(tmp_path, "[run]\nseed = 1\n[nope]\nx = 1\n")
    with pytest.raises(ConfigError) as excinfo:
        load_config(path)
    assert excinfo.value.line == 3


def test_bad_value_reports_line(tmp_path: Path) -> None:
    """Test an unparsable value names its line."""
    path = _write(tmp_path, "[train]\nepochs = -2\n")
    with pytest.raises(ConfigError) as excinfo:
        load_config(path)
    assert excinfo.value.line == 2


def test_duplicate_key(tmp_path: Path) -> None:
    """Test a repeated key is refused."""
    path = _write(tmp_path, "[train]\nepochs = 2\nepochs = 3\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_missing_file(tmp_path: Path) -> None:
    """Test an unreadable file is a configuration error."""
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")


def test_delta_needs_override(tmp_path: Path) -> None:
    """Test delta != eps is refused unless delta_override is set."""
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, "[perturb]\ndelta = 0.05\n"))
    cfg = load_config(_write(tmp_path, "[perturb]\ndelta = 0.05\ndelta_override = true\n"))
    assert cfg.perturb_specs()[0].budget == pytest.approx(0.05)
    same = load_config(_write(tmp_path, "[perturb]\ndelta = 0.1\n"))
    assert same.perturb_specs()[0].budget == pytest.approx(0.1)


def test_eps_prime_fractions_bounded(tmp_path: Path) -> None:
    """Test eps' fractions above one are refused."""
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, "[attack]\neps_prime_fractions = 0.5, 1.5\n"))


def test_flags_override_file(tmp_path: Path) -> None:
    """Test command-line flags win over the file."""
    path = _write(tmp_path, "[train]\nepochs = 3\n")
    parser = argparse.ArgumentParser()
    add_config_flags(parser)
    args = parser.parse_args(
        ["--config", str(path), "--train-epochs", "5", "--perturb-norms", "2"]
    )
    cfg = config_from_args(args)
    assert cfg.get("train", "epochs") == 5
    assert cfg.get("perturb", "norms") == (2.0,)


def test_bad_flag_value() -> None:
    """Test a bad flag value names the flag."""
    with pytest.raises(ConfigError) as excinfo:
        load_config(overrides={("robustify", "optimizer"): "adam"})
    assert "--robustify-optimizer" in str(excinfo.value)
    assert excinfo.value.line is None


def test_environment_seed(monkeypatch: pytest.MonkeyPatch) -> None:
    """Test the seed environment variable reaches the config and its snapshot."""
    monkeypatch.setenv(SEED_ENV_VAR, "42")
    cfg = load_config()
    assert cfg.seed == 42
    assert cfg.snapshot()["run"]["seed"] == "42"


def test_snapshot_reloads_to_same_values(tmp_path: Path) -> None:
    """Test a written snapshot loads back to the same settings, metadata ignored."""
    path = _write(tmp_path, "[run]\nseed = 3\n\n[robustify]\nmax_iter = 12\nlr = 0.5\n")
    cfg = load_config(path)
    report = EvalReport(seed=cfg.seed, config_snapshot=cfg.snapshot(), metadata={"note": "x"})
    emit_report(report, tmp_path / "out")
    again = load_config(tmp_path / "out" / "run_config.ini")
    assert again.values == cfg.values
    assert again.seed == 3


def test_typed_bundles(tmp_path: Path) -> None:
    """Test the typed settings built from a config."""
    path = _write(
        tmp_path,
        "[perturb]\nnorms = 2\neps_l2 = 0.4\n\n[attack]\nrestarts = 3\n"
        "eps_prime_fractions = 0.5, 1.0\n\n[smooth]\nsigma = 0.5\nm = 7\n",
    )
    cfg = load_config(path)
    spec = cfg.perturb_specs()[0]
    wb = cfg.whitebox_config(spec)
    assert wb.eps_primes(spec.eps) == pytest.approx((0.2, 0.4))
    assert wb.attack.restarts == 3
    assert cfg.smooth_config().M == 7
    assert cfg.smooth_config().sigma == pytest.approx(0.5)
    assert cfg.train_config(spec, "plain").mode == "plain"
