"""Test suite for ball projections, sampling and FGSM steps."""

import math

import numpy as np
import pytest

from src.classifier import Classifier
from src.geometry import (
    clamp_unit,
    fgsm_direction,
    fgsm_step,
    fgsm_update,
    lp_norm,
    project_ball,
    projection_factor,
    sample_uniform_ball,
    tanh_reparam,
    tanh_reparam_grad_chain,
    tanh_reparam_inverse,
)


@pytest.fixture
def rng() -> np.random.Generator:
    """Create a seeded generator fixture for tests."""
    return np.random.default_rng(11)


def test_lp_norm_vector_and_batch() -> None:
    """Test norms of a vector and of batch rows."""
    v = np.array([3.0, -4.0])
    assert lp_norm(v, 2) == pytest.approx(5.0)
    assert lp_norm(v, math.inf) == pytest.approx(4.0)
    batch = np.array([[3.0, 4.0], [0.0, -1.0]])
    assert np.allclose(lp_norm(batch, "inf"), [4.0, 1.0])


def test_unsupported_norm_rejected() -> None:
    """Test p outside {2, inf} is refused."""
    with pytest.raises(ValueError):
        lp_norm(np.ones(2), 1)
    with pytest.raises(ValueError):
        project_ball(np.ones(2), np.zeros(2), 1.0, 3)


def test_linf_projection_example() -> None:
    """Test the linf projection clamps coordinate-wise."""
    out = project_ball(np.array([0.9, 0.1]), np.array([0.5, 0.5]), 0.2, math.inf)
    assert np.allclose(out, [0.7, 0.3])


def test_l2_projection_example() -> None:
    """Test the l2 projection rescales the offset."""
    out = project_ball(np.array([3.0, 4.0]), np.zeros(2), 1.0, 2)
    assert np.allclose(out, [0.6, 0.8])


def test_projection_keeps_interior_points() -> None:
    """Test points inside the ball are unchanged."""
    x = np.array([0.55, 0.45])
    center = np.array([0.5, 0.5])
    for p in (2, math.inf):
        assert np.array_equal(project_ball(x, center, 0.1, p), x)


def test_projection_is_idempotent_and_inside(rng: np.random.Generator) -> None:
    """Test projections land in the ball and projecting twice changes nothing."""
    center = rng.uniform(size=5)
    for p in (2, math.inf):
        for _ in range(20):
            x = center + rng.normal(scale=2.0, size=5)
            once = project_ball(x, center, 0.3, p)
            assert lp_norm(once - center, p) <= 0.3 + 1e-12
            assert np.allclose(project_ball(once, center, 0.3, p), once)


def test_zero_radius_projects_to_center() -> None:
    """Test a zero radius collapses onto the center."""
    center = np.array([0.2, 0.8])
    for p in (2, math.inf):
        assert np.allclose(project_ball(np.array([0.9, 0.1]), center, 0.0, p), center)


def test_negative_radius_and_mismatch_rejected() -> None:
    """Test projection contracts."""
    with pytest.raises(ValueError):
        project_ball(np.zeros(2), np.zeros(2), -1.0, 2)
    with pytest.raises(ValueError):
        project_ball(np.zeros(2), np.zeros(3), 1.0, 2)


def test_projection_factor() -> None:
    """Test the l2 projection written as k (x - c) + c."""
    assert projection_factor(np.array([3.0, 4.0]), np.zeros(2), 1.0) == pytest.approx(0.2)
    assert projection_factor(np.array([0.1, 0.0]), np.zeros(2), 1.0) == 1.0


def test_clamp_unit() -> None:
    """Test pixel clamping."""
    assert np.array_equal(clamp_unit(np.array([-0.5, 0.5, 1.5])), [0.0, 0.5, 1.0])


def test_uniform_samples_stay_in_ball(rng: np.random.Generator) -> None:
    """Test samples lie in the ball for both norms."""
    for p in (2, math.inf):
        batch = sample_uniform_ball(6, 0.25, p, rng, size=200)
        assert batch.shape == (200, 6)
        assert np.all(lp_norm(batch, p) <= 0.25 + 1e-12)


def test_l2_sample_radius_distribution(rng: np.random.Generator) -> None:
    """Test l2 sample radii follow P(r <= t) = t^dim."""
    dim = 3
    radii = lp_norm(sample_uniform_ball(dim, 1.0, 2, rng, size=20000), 2)
    assert np.mean(radii <= 0.5) == pytest.approx(0.5**dim, abs=0.01)


def test_zero_radius_sample_draws_nothing() -> None:
    """Test a zero radius returns zeros and leaves the generator untouched."""
    first = np.random.default_rng(5)
    second = np.random.default_rng(5)
    assert np.array_equal(sample_uniform_ball(4, 0.0, 2, first), np.zeros(4))
    assert first.random() == second.random()


def test_fgsm_direction_linf_sign() -> None:
    """Test the linf direction is the sign with sign(0) = 0."""
    direction, flags = fgsm_direction(np.array([0.3, 0.0, -2.0]), math.inf)
    assert np.array_equal(direction, [1.0, 0.0, -1.0])
    assert flags is False


def test_fgsm_zero_gradient_guard() -> None:
    """Test an l2 step with a vanishing gradient stays in place and is flagged."""
    x = np.array([0.4, 0.6])
    new_x, flag = fgsm_update(x, np.array([1e-14, 0.0]), 0.1, 2)
    assert flag
    assert np.array_equal(new_x, x)


def test_fgsm_l2_step_length() -> None:
    """Test an l2 step moves exactly alpha along the gradient."""
    x = np.array([0.5, 0.5])
    new_x, flag = fgsm_update(x, np.array([3.0, 4.0]), 0.1, 2)
    assert not flag
    assert np.allclose(new_x - x, [0.06, 0.08])


def test_fgsm_requires_positive_alpha() -> None:
    """Test the step size contract."""
    with pytest.raises(ValueError):
        fgsm_update(np.zeros(2), np.ones(2), 0.0, 2)


def test_fgsm_step_increases_linear_loss() -> None:
    """Test a model-driven FGSM step raises the loss of the label."""
    model = Classifier.linear(np.array([[1.0, -1.0], [-1.0, 1.0]]), np.zeros(2))
    x = np.array([0.6, 0.4])
    new_x, _ = fgsm_step(x, 0, model, 0.05, math.inf)
    assert model.loss(new_x, 0) > model.loss(x, 0)


def test_tanh_reparam_origin_and_bounds() -> None:
    """Test w = 0 maps to x_o and every w stays within delta."""
    x_o = np.array([0.2, 0.5, 0.99])
    assert np.array_equal(tanh_reparam(x_o, np.zeros(3), 0.1), x_o)
    out = tanh_reparam(x_o, np.array([50.0, -50.0, 50.0]), 0.1)
    assert np.all(np.abs(out - x_o) <= 0.1 + 1e-12)
    assert out[2] == 1.0


def test_tanh_reparam_inverse_round_trip() -> None:
    """Test the inverse recovers an interior point."""
    x_o = np.array([0.4, 0.6])
    x = np.array([0.45, 0.58])
    w = tanh_reparam_inverse(x_o, x, 0.1)
    assert np.allclose(tanh_reparam(x_o, w, 0.1), x)


def test_tanh_reparam_chain_masks_clamp() -> None:
    """Test the chain factor vanishes where the cube clamp is active."""
    x_o = np.array([0.5, 0.98])
    chain = tanh_reparam_grad_chain(x_o, np.array([0.0, 3.0]), 0.1)
    assert chain[0] == pytest.approx(0.1)
    assert chain[1] == 0.0


def test_tanh_reparam_rejects_l2() -> None:
    """Test the reparameterization is linf-only."""
    with pytest.raises(ValueError):
        tanh_reparam(np.zeros(2), np.zeros(2), 0.1, 2)
