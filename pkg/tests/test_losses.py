"""Test suite for the base and smoothed loss oracles."""

import numpy as np
import pytest

from src.classifier import Classifier
from src.losses import ModelLoss, SmoothedLoss


@pytest.fixture
def model() -> Classifier:
    """Create a small tanh MLP fixture for tests."""
    return Classifier.mlp([3, 6, 2], np.random.default_rng(21), "tanh")


def _fd(fn, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    grad = np.zeros_like(x)
    for i in range(x.shape[0]):
        e = np.zeros_like(x)
        e[i] = h
        grad[i] = (fn(x + e) - fn(x - e)) / (2 * h)
    return grad


def test_model_loss_matches_classifier(model: Classifier) -> None:
    """Test the base oracle is the classifier's cross-entropy."""
    oracle = ModelLoss(model)
    x = np.array([0.2, 0.4, 0.6])
    rng = np.random.default_rng(0)
    loss, grad = oracle.loss_and_grad(x, 1, rng)
    assert loss == pytest.approx(model.loss(x, 1))
    assert np.allclose(grad, model.input_grad(x, 1))
    assert oracle.predict(x, rng) == model.predict(x)


def test_sigma_zero_is_base_oracle(model: Classifier) -> None:
    """Test sigma = 0 reproduces the base oracle bit for bit without drawing noise."""
    smoothed = SmoothedLoss(model, 0.0, M=5, n_pred=9)
    base = ModelLoss(model)
    x = np.array([0.5, 0.1, 0.7])
    rng = np.random.default_rng(3)
    untouched = np.random.default_rng(3)
    assert smoothed.loss(x, 0, rng) == base.loss(x, 0, rng)
    s_loss, s_grad = smoothed.loss_and_grad(x, 0, rng)
    b_loss, b_grad = base.loss_and_grad(x, 0, rng)
    assert s_loss == b_loss
    assert np.array_equal(s_grad, b_grad)
    assert smoothed.predict(x, rng) == base.predict(x, rng)
    assert rng.random() == untouched.random()


def test_smoothed_loss_gradient_for_fixed_noise(model: Classifier) -> None:
    """Test the smoothed-loss gradient against finite differences with frozen noise."""
    oracle = SmoothedLoss(model, 0.3, M=7)
    noise = oracle.draw_noise(3, 7, np.random.default_rng(4))
    x = np.array([0.3, 0.6, 0.2])
    _, grad = oracle.loss_with_noise(x, 1, noise)
    fd = _fd(lambda z: oracle.loss_with_noise(z, 1, noise)[0], x)
    assert np.allclose(grad, fd, atol=1e-7)


def test_smoothed_soft_gradient_for_fixed_noise(model: Classifier) -> None:
    """Test the soft-classifier estimate and its gradient with frozen noise."""
    oracle = SmoothedLoss(model, 0.2, M=4)
    noise = oracle.draw_noise(3, 4, np.random.default_rng(8))
    x = np.array([0.9, 0.1, 0.4])
    prob, grad = oracle.soft_with_noise(x, 0, noise)
    expected = float(np.mean(model.probabilities(x + noise)[:, 0]))
    assert prob == pytest.approx(expected)
    fd = _fd(lambda z: oracle.soft_with_noise(z, 0, noise)[0], x)
    assert np.allclose(grad, fd, atol=1e-7)


def test_smoothed_loss_is_neg_log_of_soft(model: Classifier) -> None:
    """Test loss_with_noise is -log of the averaged probability."""
    oracle = SmoothedLoss(model, 0.25, M=6)
    noise = oracle.draw_noise(3, 6, np.random.default_rng(1))
    x = np.array([0.5, 0.5, 0.5])
    loss, _ = oracle.loss_with_noise(x, 1, noise)
    prob, _ = oracle.soft_with_noise(x, 1, noise)
    assert loss == pytest.approx(-np.log(prob))


def test_votes_count_every_sample(model: Classifier) -> None:
    """Test vote counts add up to the number of samples."""
    oracle = SmoothedLoss(model, 0.5)
    votes = oracle.votes(np.array([0.1, 0.2, 0.3]), 123, np.random.default_rng(2))
    assert votes.shape == (2,)
    assert votes.sum() == 123


def test_vote_fraction_on_hyperplane() -> None:
    """Test a point on a linear decision boundary gets about half the votes."""
    model = Classifier.linear(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.zeros(2))
    oracle = SmoothedLoss(model, 0.25)
    n = 4000
    fraction = oracle.votes(np.array([0.0, 0.5]), n, np.random.default_rng(6))[0] / n
    assert abs(fraction - 0.5) <= 3 * np.sqrt(0.25 / n)


def test_far_point_votes_unanimously() -> None:
    """Test a point far from the boundary is predicted with every vote."""
    model = Classifier.linear(np.array([[10.0, 0.0], [-10.0, 0.0]]), np.zeros(2))
    oracle = SmoothedLoss(model, 0.1, n_pred=50)
    x = np.array([1.0, 0.5])
    assert oracle.predict(x, np.random.default_rng(0)) == 0
    assert oracle.votes(x, 50, np.random.default_rng(0))[0] == 50


def test_invalid_smoothing_settings(model: Classifier) -> None:
    """Test negative sigma and empty sample counts are refused."""
    with pytest.raises(ValueError):
        SmoothedLoss(model, -0.1)
    with pytest.raises(ValueError):
        SmoothedLoss(model, 0.1, M=0)


def test_smoothed_loss_spread_follows_inverse_root_m() -> None:
    """Test the Monte-Carlo loss standard deviation halves when M quadruples."""
    linear = Classifier.linear(np.array([[2.0, 0.0], [-2.0, 0.0]]), np.zeros(2))
    x = np.array([0.55, 0.5])
    rng = np.random.default_rng(29)

    def spread(M: int) -> float:
        oracle = SmoothedLoss(linear, sigma=0.25, M=M)
        return float(np.std([oracle.loss(x, 0, rng) for _ in range(2000)]))

    ratio = spread(4) / spread(16)
    assert 1.6 <= ratio <= 2.5
