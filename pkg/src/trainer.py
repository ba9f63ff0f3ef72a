"""Classifier training.

This module contains the Trainer class that handles:
- Preemptively robust training (L-step loss-minimizing PGD, then K-step attack)
- PGD adversarial training and plain training on the same code path
- Momentum SGD with weight decay and step learning-rate decay
- Per-epoch loss history and checkpoint selection
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .attack import pgd
from .classifier import Classifier, LayerGrad
from .constants import LR_DECAY_FACTOR
from .datasets import Dataset
from .errors import NumericalAbortError
from .geometry import clamp_unit, fgsm_update, project_ball, sample_uniform_ball
from .preempt_types import HistoryRow, PgdConfig, TrainConfig

Velocity = List[LayerGrad]


def sgd_step(
    model: Classifier,
    grads: Sequence[LayerGrad],
    lr: float,
    momentum: float,
    weight_decay: float,
    velocity: Optional[Velocity] = None,
) -> Tuple[Classifier, Velocity]:
    """One momentum SGD step: v = mu v + (g + wd theta); theta -= lr v.

    Args:
        model: Current parameters (left untouched)
        grads: Per-layer gradients
        lr: Learning rate
        momentum: Momentum coefficient mu
        weight_decay: L2 coefficient added to the gradient
        velocity: Previous velocity; zeros when None

    Returns:
        (updated copy of the model, new velocity)
    """
    updated = model.copy()
    new_velocity: Velocity = []
    for i, (layer, grad) in enumerate(zip(updated.layers, grads)):
        v_w = grad.weights + weight_decay * layer.weights
        v_b = grad.bias + weight_decay * layer.bias
        if velocity is not None:
            v_w = momentum * velocity[i].weights + v_w
            v_b = momentum * velocity[i].bias + v_b
        layer.weights = layer.weights - lr * v_w
        layer.bias = layer.bias - lr * v_b
        new_velocity.append(LayerGrad(v_w, v_b))
    return updated, new_velocity


class MomentumSgd:
    """Momentum SGD optimizer holding its velocity between steps."""

    def __init__(self, lr: float, momentum: float, weight_decay: float) -> None:
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: Optional[Velocity] = None

    def step(self, model: Classifier, grads: Sequence[LayerGrad]) -> Classifier:
        """Apply one update and return the new model."""
        model, self.velocity = sgd_step(
            model, grads, self.lr, self.momentum, self.weight_decay, self.velocity
        )
        return model


def batch_pgd(
    model: Classifier,
    center: np.ndarray,
    labels: np.ndarray,
    radius: float,
    alpha: float,
    steps: int,
    p: float,
    rng: np.random.Generator,
    direction: float,
) -> np.ndarray:
    """Row-wise PGD around each center, ascending (+1) or descending (-1) the loss.

    With no steps or a zero radius the centers come back unchanged and the
    generator is not touched.
    """
    if steps == 0 or radius == 0:
        return center.copy()
    eta = sample_uniform_ball(center.shape[1], radius, p, rng, size=center.shape[0])
    x = clamp_unit(center + eta)
    for _ in range(steps):
        grad = model.evaluate(x, labels).input_grad
        assert grad is not None
        stepped, _ = fgsm_update(x, direction * grad, alpha, p)
        x = clamp_unit(project_ball(stepped, center, radius, p))
    return x


@dataclass
class TrainResult:
    """Selected checkpoint with its history."""

    model: Classifier
    history: List[HistoryRow] = field(default_factory=list)
    step_losses: List[float] = field(default_factory=list)
    best_epoch: int = 0


class Trainer:
    """Runs one of the three training modes on a single model."""

    def __init__(self, cfg: TrainConfig, holdout_seed: int = 0) -> None:
        """Initialize the trainer.

        Args:
            cfg: Training settings
            holdout_seed: Seed of the holdout PGD evaluation, fresh every epoch
        """
        self.logger = logging.getLogger(__name__)
        self.cfg = cfg
        self.holdout_seed = holdout_seed
        self.min_steps, self.delta, self.max_steps = self._effective_steps()

    def _effective_steps(self) -> Tuple[int, float, int]:
        cfg = self.cfg
        if cfg.mode == "plain":
            return 0, 0.0, 0
        if cfg.mode == "adversarial":
            return 0, 0.0, cfg.inner_max_steps
        return cfg.inner_min_steps, cfg.spec.budget, cfg.inner_max_steps

    def perturb(
        self, model: Classifier, x_o: np.ndarray, y_o: np.ndarray, rng: np.random.Generator
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Training-time robustified points x_r and their attacks x_r^a."""
        spec = self.cfg.spec
        x_r = batch_pgd(
            model, x_o, y_o, self.delta, self.cfg.min_step(), self.min_steps, spec.p, rng, -1.0
        )
        x_adv = batch_pgd(
            model, x_r, y_o, spec.eps, self.cfg.max_step(), self.max_steps, spec.p, rng, 1.0
        )
        return x_r, x_adv

    def _holdout_rows(self, model: Classifier, dataset: Dataset, epoch: int) -> List[HistoryRow]:
        x, y = dataset.test_x, dataset.test_y
        if not len(y):
            return []
        clean_loss = model.loss(x, y) / len(y)
        clean_acc = float(np.mean(model.predict(x) == y))
        rng = np.random.default_rng(self.holdout_seed)
        attack = PgdConfig()
        adv = np.array(
            [pgd(model, xi, int(yi), self.cfg.spec, attack, rng) for xi, yi in zip(x, y)]
        )
        adv_loss = model.loss(adv, y) / len(y)
        adv_acc = float(np.mean(model.predict(adv) == y))
        return [
            HistoryRow(epoch, "test", clean_loss, clean_acc),
            HistoryRow(epoch, "test_pgd", adv_loss, adv_acc),
        ]

    def fit(self, model: Classifier, dataset: Dataset, rng: np.random.Generator) -> TrainResult:
        """Train a copy of model on the training split.

        Args:
            model: Initial parameters
            dataset: Labeled data; the test split drives checkpoint selection
            rng: Generator for shuffling and inner random starts

        Returns:
            TrainResult with the selected checkpoint
        """
        cfg = self.cfg
        optimizer = MomentumSgd(cfg.lr, cfg.momentum, cfg.weight_decay)
        result = TrainResult(model.copy())
        current = model.copy()
        best_acc = -math.inf
        x_train, y_train = dataset.train_x, dataset.train_y
        n_train = len(y_train)

        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(n_train)
            epoch_loss = 0.0
            epoch_hits = 0
            for start in range(0, n_train, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                x_o, y_o = x_train[idx], y_train[idx]
                _, x_adv = self.perturb(current, x_o, y_o, rng)
                step = current.evaluate(x_adv, y_o, need_input=False, need_params=True)
                if not math.isfinite(step.loss):
                    raise NumericalAbortError(
                        f"non-finite training loss at epoch {epoch}, batch offset {start}"
                    )
                assert step.param_grads is not None
                scale = 1.0 / len(idx)
                grads = [LayerGrad(g.weights * scale, g.bias * scale) for g in step.param_grads]
                epoch_hits += int(np.sum(current.predict(x_adv) == y_o))
                current = optimizer.step(current, grads)
                epoch_loss += step.loss
                result.step_losses.append(step.loss * scale)

            train_row = HistoryRow(
                epoch,
                "train",
                epoch_loss / n_train if n_train else 0.0,
                epoch_hits / n_train if n_train else 0.0,
            )
            result.history.append(train_row)
            holdout = self._holdout_rows(current, dataset, epoch)
            result.history.extend(holdout)
            self.logger.info(
                "Epoch %d (%s): train loss %.4f acc %.4f",
                epoch,
                cfg.mode,
                train_row.loss,
                train_row.acc,
            )

            if cfg.mode == "adversarial" and holdout:
                if holdout[-1].acc > best_acc:
                    best_acc = holdout[-1].acc
                    result.model, result.best_epoch = current.copy(), epoch
            else:
                result.model, result.best_epoch = current.copy(), epoch

            if epoch in cfg.lr_decay_epochs:
                optimizer.lr *= LR_DECAY_FACTOR
                self.logger.info("Learning rate decayed to %.6g", optimizer.lr)

        return result


def train(
    model: Classifier,
    dataset: Dataset,
    cfg: TrainConfig,
    rng: np.random.Generator,
    holdout_seed: int = 0,
) -> TrainResult:
    """Train model with cfg.mode; see Trainer."""
    return Trainer(cfg, holdout_seed).fit(model, dataset, rng)
