"""Test suite for the white-box adversary."""

import math

import numpy as np
import pytest

from src.classifier import Classifier
from src.geometry import lp_norm
from src.preempt_types import (
    PerturbSpec,
    PgdConfig,
    RobustifyConfig,
    WhiteboxCandidate,
    WhiteboxConfig,
)
from src.whitebox import (
    distance_histogram,
    distance_stats,
    eval_whitebox,
    reconstruct,
    whitebox_attack,
)


@pytest.fixture
def model() -> Classifier:
    """Create a small MLP fixture for tests."""
    return Classifier.mlp([3, 8, 2], np.random.default_rng(17), "relu")


@pytest.fixture
def wb_cfg() -> WhiteboxConfig:
    """Create a short white-box config fixture for tests."""
    return WhiteboxConfig(
        recon=RobustifyConfig(max_iter=5, inner=PgdConfig(steps=5)),
        attack=PgdConfig(steps=5, restarts=2),
    )


@pytest.fixture
def linear() -> Classifier:
    """Create a one-dimensional linear classifier fixture: class 0 iff x > 0.5."""
    return Classifier.linear(np.array([[1.0], [-1.0]]), np.array([-0.5, 0.5]))


def test_reconstruction_stays_near_observation(model: Classifier) -> None:
    """Test the reconstruction lies within delta of x_r and inside the cube."""
    x_r = np.array([0.1, 0.5, 0.95])
    cfg = RobustifyConfig(max_iter=5, inner=PgdConfig(steps=5), lr=0.5)
    for p, eps in ((math.inf, 0.1), (2, 0.3)):
        x_hat = reconstruct(model, x_r, PerturbSpec(p, eps), cfg, np.random.default_rng(1))
        assert lp_norm(x_hat - x_r, p) <= eps + 1e-9
        assert np.all((x_hat >= 0) & (x_hat <= 1))


def test_reconstruction_ascends_loss(linear: Classifier) -> None:
    """Test reconstruction moves toward the decision boundary of c(x_r)."""
    x_r = np.array([0.8])
    cfg = RobustifyConfig(max_iter=20, inner=PgdConfig(steps=5), lr=1.0)
    x_hat = reconstruct(linear, x_r, PerturbSpec(2, 0.1), cfg, np.random.default_rng(0))
    assert x_hat[0] == pytest.approx(0.7)


def test_identity_defender_reconstructs_observation(model: Classifier) -> None:
    """Test a zero defender budget reconstructs the observed point itself."""
    x_r = np.array([0.4, 0.4, 0.4])
    cfg = RobustifyConfig(max_iter=3, inner=PgdConfig(steps=3))
    x_hat = reconstruct(model, x_r, PerturbSpec(2, 0.3, 0.0), cfg, np.random.default_rng(0))
    assert np.array_equal(x_hat, x_r)


def test_sweep_produces_one_candidate_per_budget(model: Classifier, wb_cfg: WhiteboxConfig) -> None:
    """Test the eps' sweep yields candidates inside their own balls around x_hat."""
    spec = PerturbSpec(math.inf, 0.1)
    result = whitebox_attack(model, np.full(3, 0.5), 0, spec, wb_cfg, np.random.default_rng(2))
    assert [c.eps_prime for c in result.candidates] == pytest.approx([0.025, 0.05, 0.075, 0.1])
    for cand in result.candidates:
        assert lp_norm(cand.x_adv - result.x_hat, math.inf) <= cand.eps_prime + 1e-12
        assert cand.predicted == model.predict(cand.x_adv)


def test_sweep_rejects_budget_above_eps(model: Classifier) -> None:
    """Test eps' values must lie in (0, eps]."""
    cfg = WhiteboxConfig(eps_prime_grid=(0.05, 0.2))
    with pytest.raises(ValueError):
        whitebox_attack(
            model, np.full(3, 0.5), 0, PerturbSpec(math.inf, 0.1), cfg, np.random.default_rng(0)
        )


def test_verdict_ignores_invalid_misclassification(linear: Classifier) -> None:
    """Test a misclassifying candidate outside B_eps(x_o) does not count as a break."""
    x_o = np.array([0.7])
    outside = WhiteboxCandidate(0.1, np.array([0.45]), 1)
    verdict = eval_whitebox([outside], x_o, 0, linear, 0.1, math.inf)
    assert verdict.robust
    assert verdict.misclassified == [True]
    assert verdict.valid == [False]
    assert verdict.attack_dists == pytest.approx([0.25])


def test_verdict_counts_valid_misclassification(linear: Classifier) -> None:
    """Test a misclassifying candidate inside B_eps(x_o) breaks robustness."""
    x_o = np.array([0.55])
    inside = WhiteboxCandidate(0.1, np.array([0.48]), 1)
    safe = WhiteboxCandidate(0.05, np.array([0.6]), 0)
    verdict = eval_whitebox([safe, inside], x_o, 0, linear, 0.1, math.inf)
    assert not verdict.robust
    assert verdict.valid == [True, True]


def test_verdict_with_custom_predictor(linear: Classifier) -> None:
    """Test the verdict uses the supplied predictor instead of the model."""
    x_o = np.array([0.55])
    inside = WhiteboxCandidate(0.1, np.array([0.48]), 1)
    verdict = eval_whitebox([inside], x_o, 0, linear, 0.1, math.inf, predict=lambda z: 0)
    assert verdict.robust


def test_distance_stats_fractions() -> None:
    """Test boundary and outside fractions."""
    stats = distance_stats([0.05, 0.095, 0.1, 0.2], [0.05, 0.12, 0.15], 0.1)
    assert stats.frac_recon_near_boundary == pytest.approx(0.5)
    assert stats.frac_attack_outside == pytest.approx(2 / 3)
    empty = distance_stats([], [], 0.1)
    assert empty.frac_recon_near_boundary == 0.0
    assert empty.frac_attack_outside == 0.0


def test_distance_histogram_buckets() -> None:
    """Test buckets of width eps / 20 that cover every distance."""
    dists = [0.0, 0.004, 0.006, 0.1]
    buckets = distance_histogram(dists, 0.1)
    assert buckets[0][0] == 0.0
    assert buckets[0][1] == pytest.approx(0.005)
    assert sum(count for _, _, count in buckets) == len(dists)
    assert buckets[0][2] == 2
    assert distance_histogram([], 0.1) == []
