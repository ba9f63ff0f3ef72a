"""Loss oracles seen by the attacks.

This module contains the two views an attacker or defender has of the model:
- ModelLoss: cross-entropy of the base classifier
- SmoothedLoss: -log of the Monte-Carlo smoothed soft classifier

Both expose the same methods so PGD, robustification and reconstruction run
unchanged on either. With sigma = 0 the smoothed oracle delegates to the base
one without drawing noise, so the two are bit-identical.
"""

from typing import Optional, Tuple

import numpy as np

from .classifier import Classifier
from .constants import SMOOTH_M, SMOOTH_N_PRED


class ModelLoss:
    """Cross-entropy of the base classifier; ignores the generator."""

    def __init__(self, model: Classifier) -> None:
        self.model = model

    def loss(self, x: np.ndarray, y: int, rng: np.random.Generator) -> float:
        """Loss of label y at x."""
        return self.model.loss(x, y)

    def loss_and_grad(
        self, x: np.ndarray, y: int, rng: np.random.Generator
    ) -> Tuple[float, np.ndarray]:
        """Loss and input gradient of label y at x."""
        result = self.model.evaluate(x, y)
        assert result.input_grad is not None
        return result.loss, result.input_grad

    def predict(self, x: np.ndarray, rng: np.random.Generator) -> int:
        """Hard label at x."""
        return int(self.model.predict(x))


class SmoothedLoss(ModelLoss):
    """-log of the smoothed soft classifier, estimated with M Gaussian samples."""

    def __init__(
        self,
        model: Classifier,
        sigma: float,
        M: int = SMOOTH_M,
        n_pred: int = SMOOTH_N_PRED,
    ) -> None:
        super().__init__(model)
        if sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {sigma}")
        if M < 1 or n_pred < 1:
            raise ValueError("M and n_pred must be >= 1")
        self.sigma = sigma
        self.M = M
        self.n_pred = n_pred

    def draw_noise(self, dim: int, count: int, rng: np.random.Generator) -> np.ndarray:
        """count x dim samples of N(0, sigma^2 I)."""
        return rng.standard_normal((count, dim)) * self.sigma

    def _per_sample(
        self, x: np.ndarray, y: int, noise: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray]:
        batch = x + noise
        labels = np.full(batch.shape[0], y)
        log_probs = self.model.log_probabilities(batch)[:, y]
        grads = self.model.evaluate(batch, labels).input_grad
        assert grads is not None
        return log_probs, grads

    def loss_with_noise(
        self, x: np.ndarray, y: int, noise: np.ndarray
    ) -> Tuple[float, np.ndarray]:
        """Smoothed loss and its gradient for one fixed noise realization.

        The gradient is the softmax(-losses)-weighted mean of per-sample loss
        gradients, the exact derivative of -log(mean_m C(x + xi_m)_y).
        """
        log_probs, grads = self._per_sample(x, y, noise)
        top = log_probs.max()
        weights = np.exp(log_probs - top)
        total = weights.sum()
        loss = -(top + np.log(total / len(log_probs)))
        return float(loss), (weights / total) @ grads

    def soft_with_noise(
        self, x: np.ndarray, y: int, noise: np.ndarray
    ) -> Tuple[float, np.ndarray]:
        """Smoothed soft probability of y and its gradient for fixed noise."""
        log_probs, grads = self._per_sample(x, y, noise)
        probs = np.exp(log_probs)
        count = len(probs)
        return float(probs.sum() / count), -(probs @ grads) / count

    def loss(self, x: np.ndarray, y: int, rng: np.random.Generator) -> float:
        if self.sigma == 0:
            return super().loss(x, y, rng)
        noise = self.draw_noise(x.shape[-1], self.M, rng)
        log_probs = self.model.log_probabilities(x + noise)[:, y]
        top = log_probs.max()
        return float(-(top + np.log(np.exp(log_probs - top).sum() / self.M)))

    def loss_and_grad(
        self, x: np.ndarray, y: int, rng: np.random.Generator
    ) -> Tuple[float, np.ndarray]:
        if self.sigma == 0:
            return super().loss_and_grad(x, y, rng)
        return self.loss_with_noise(x, y, self.draw_noise(x.shape[-1], self.M, rng))

    def votes(
        self, x: np.ndarray, count: int, rng: np.random.Generator
    ) -> np.ndarray:
        """Class counts of the base classifier over count noisy copies of x."""
        preds = np.asarray(self.model.predict(x + self.draw_noise(x.shape[-1], count, rng)))
        return np.bincount(preds, minlength=self.model.num_classes)

    def predict(
        self, x: np.ndarray, rng: np.random.Generator, count: Optional[int] = None
    ) -> int:
        """Majority vote over n_pred (or count) samples; lowest index wins ties."""
        if self.sigma == 0:
            return super().predict(x, rng)
        return int(np.argmax(self.votes(x, count or self.n_pred, rng)))
