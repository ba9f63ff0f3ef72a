"""Test suite for the acceptance self-test pieces."""

import inspect
import logging
import math
from pathlib import Path

import numpy as np
import pytest

from src.classifier import Classifier
from src.config import load_config
from src.constants import SEED_ENV_VAR, SOUNDNESS_ATTACKS, SOUNDNESS_MIN_POINTS
from src.preempt_types import PerturbSpec
from src.selftest import SELFTEST_SETTINGS, SelfTest, binomial_lower_bisection, selftest_config


@pytest.fixture(autouse=True)
def no_seed_env(monkeypatch: pytest.MonkeyPatch) -> None:
    """Create a clean seed environment for every test."""
    monkeypatch.delenv(SEED_ENV_VAR, raising=False)


@pytest.fixture
def selftest(tmp_path: Path) -> SelfTest:
    """Create a self-test fixture on a reduced dataset for tests."""
    overrides = dict(SELFTEST_SETTINGS)
    overrides[("data", "n_per_class")] = "30"
    overrides[("output", "dir")] = str(tmp_path)
    return SelfTest(load_config(overrides=overrides))


def _check(selftest: SelfTest, name: str):
    return next(c for c in selftest.checks if c.name == name)


def _small_selftest(out: Path, **extra: str) -> SelfTest:
    overrides = dict(SELFTEST_SETTINGS)
    overrides[("data", "n_per_class")] = "30"
    overrides[("output", "dir")] = str(out)
    for name, value in extra.items():
        section, key = name.split("__")
        overrides[(section, key)] = value
    return SelfTest(load_config(overrides=overrides))


def test_selftest_config(tmp_path: Path) -> None:
    """Test the fixed configuration only varies in seed and output directory."""
    cfg = selftest_config(5, str(tmp_path))
    assert cfg.seed == 5
    assert cfg.get("output", "dir") == str(tmp_path)
    assert cfg.get("data", "dim") == 8
    assert cfg.get("model", "modes") == ("adversarial", "preempt_robust")
    assert cfg.perturb_specs()[0].p == math.inf


def test_bisection_bound() -> None:
    """Test the reference bound at its edge cases."""
    assert binomial_lower_bisection(0, 50, 0.01) == 0.0
    assert binomial_lower_bisection(40, 40, 0.01) == pytest.approx(0.01 ** (1 / 40))
    assert binomial_lower_bisection(30, 100, 0.01) < binomial_lower_bisection(60, 100, 0.01)


def test_clopper_pearson_check_passes(selftest: SelfTest) -> None:
    """Test the library bound agrees with the bisection on random settings."""
    selftest.check_clopper_pearson()
    assert _check(selftest, "clopper_pearson_exact").passed


def test_lemma2_checks_pass(selftest: SelfTest) -> None:
    """Test the closed-form Jacobian checks."""
    selftest.check_lemma2()
    assert _check(selftest, "lemma2_jacobian").passed
    assert _check(selftest, "lemma2_zero_hessian_identity").passed


def test_linear_oracle_checks_pass(selftest: SelfTest) -> None:
    """Test robustification of linear models reaches the closed-form optimum for both norms."""
    selftest.check_linear_oracle()
    assert _check(selftest, "linear_oracle_inf").passed
    assert _check(selftest, "linear_oracle_l2").passed


def test_degeneracy_checks_pass(selftest: SelfTest) -> None:
    """Test degenerate training and smoothing settings match the simpler procedures."""
    model = Classifier.mlp([8, 16, 2], np.random.default_rng(0), "tanh")
    selftest.check_degeneracies(model, PerturbSpec(math.inf, 0.1))
    assert _check(selftest, "degenerate_preempt_is_adversarial").passed
    assert _check(selftest, "degenerate_adversarial_is_plain").passed
    assert _check(selftest, "sigma_zero_is_base").passed


def test_failed_hard_check_is_logged(selftest: SelfTest, caplog: pytest.LogCaptureFixture) -> None:
    """Test hard failures are logged as errors and soft ones are not."""
    with caplog.at_level(logging.INFO, logger="src.selftest"):
        selftest._record("soft_metric", 0.1, 0.5, False, hard=False)
        selftest._record("hard_metric", 1.0, 0.0, False)
    levels = {r.getMessage().split(":")[0]: r.levelno for r in caplog.records}
    assert levels["soft_metric"] == logging.INFO
    assert levels["hard_metric"] == logging.ERROR
    assert not _check(selftest, "hard_metric").passed


def test_soundness_needs_enough_certified_points(selftest: SelfTest) -> None:
    """Test too few certified points fails the hard point count without any flips."""
    assert inspect.signature(SelfTest.check_soundness).parameters["attacks"].default == SOUNDNESS_ATTACKS
    model = Classifier.mlp([8, 16, 2], np.random.default_rng(3), "tanh")
    selftest.check_soundness(model, attacks=0)
    points = _check(selftest, "smoothing_points_checked")
    assert points.hard
    assert not points.passed
    assert points.threshold == SOUNDNESS_MIN_POINTS
    assert _check(selftest, "smoothing_soundness_flips").passed


def test_effectiveness_compares_both_modes(tmp_path: Path) -> None:
    """Test the grey-box gain and clean-accuracy comparisons are recorded as soft checks."""
    selftest = _small_selftest(
        tmp_path, train__epochs="1", robustify__max_iter="5", run__n_eval="6"
    )
    selftest.check_effectiveness()
    gain = _check(selftest, "robustify_grey_gain")
    clean = _check(selftest, "preempt_clean_not_below_adversarial")
    assert not gain.hard and not clean.hard
    assert -1.0 <= gain.value <= 1.0
    assert gain.passed == (gain.value >= 0.20)
    assert clean.passed == (clean.value >= 0)
    assert len(selftest.experiment.report.rows) == 4


def test_effectiveness_skipped_with_one_mode(tmp_path: Path) -> None:
    """Test the comparison is skipped when only one training mode is configured."""
    selftest = _small_selftest(
        tmp_path,
        train__epochs="1",
        model__modes="preempt_robust",
        robustify__max_iter="2",
        run__n_eval="2",
    )
    selftest.check_effectiveness()
    assert not any(c.name == "robustify_grey_gain" for c in selftest.checks)


def test_whitebox_semantics_checks(tmp_path: Path) -> None:
    """Test the reconstruction-distance and white-box comparisons on random-init robustification."""
    selftest = _small_selftest(tmp_path, robustify__max_iter="5", run__n_eval="4")
    model = Classifier.mlp([8, 16, 2], np.random.default_rng(4), "tanh")
    selftest.check_whitebox_semantics(model)
    far = _check(selftest, "whitebox_recon_far_fraction")
    margin = _check(selftest, "whitebox_not_below_grey")
    assert not far.hard and not margin.hard
    assert 0.0 <= far.value <= 1.0
    assert far.threshold == 0.5
    assert -1.0 <= margin.value <= 1.0
