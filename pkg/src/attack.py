"""Grey-box attacks.

This module contains the PGD family of attacks:
- T-step PGD with uniform random start
- Multi-restart PGD preferring misclassifying candidates
- Randomized PGD against the smoothed soft classifier
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .classifier import Classifier
from .geometry import clamp_unit, fgsm_update, project_ball, sample_uniform_ball
from .losses import ModelLoss, SmoothedLoss
from .preempt_types import PerturbSpec, PgdConfig
from .seeding import restart_generators

logger = logging.getLogger(__name__)


@dataclass
class PgdResult:
    """Final point, every iterate x^{a,0..T}, and the random start."""

    x_adv: np.ndarray
    trajectory: List[np.ndarray]
    eta: np.ndarray
    zero_grad_steps: int


def run_pgd(
    oracle: ModelLoss,
    x: np.ndarray,
    y: int,
    spec: PerturbSpec,
    cfg: PgdConfig,
    rng: np.random.Generator,
    eps: Optional[float] = None,
    eta: Optional[np.ndarray] = None,
) -> PgdResult:
    """PGD maximizing the oracle's loss of label y inside B_eps(x) and the unit cube.

    x^{a,0} = clamp(x + eta); then T times: FGSM step, projection onto
    B_eps(x), unit-cube clamp. A zero-gradient l2 step leaves the iterate in place.

    Args:
        oracle: Loss view of the model
        x: Ball center (image-valid)
        y: Label whose loss is maximized
        spec: Norm order and default budget
        cfg: Steps, step size, random start
        rng: Generator for the random start (and smoothing noise)
        eps: Budget override (defaults to spec.eps)
        eta: Fixed random start; drawn from U(B_eps(0)) when None

    Returns:
        PgdResult with the whole trajectory
    """
    radius = spec.eps if eps is None else eps
    alpha = cfg.alpha(radius)
    if eta is None:
        eta = (
            sample_uniform_ball(x.shape[-1], radius, spec.p, rng)
            if cfg.random_start
            else np.zeros_like(x)
        )
    x_adv = clamp_unit(x + eta)
    trajectory = [x_adv]
    zero_steps = 0
    for step in range(cfg.steps):
        _, grad = oracle.loss_and_grad(x_adv, y, rng)
        stepped, flag = fgsm_update(x_adv, grad, alpha, spec.p)
        if flag:
            zero_steps += 1
            logger.debug("PGD step %d: zero gradient, iterate unchanged", step)
        x_adv = clamp_unit(project_ball(stepped, x, radius, spec.p))
        trajectory.append(x_adv)
    return PgdResult(x_adv, trajectory, eta, zero_steps)


def pgd(
    model: Classifier,
    x: np.ndarray,
    y: int,
    spec: PerturbSpec,
    cfg: PgdConfig,
    rng: np.random.Generator,
    eps: Optional[float] = None,
) -> np.ndarray:
    """T-step PGD on the base classifier; returns x^a."""
    return run_pgd(ModelLoss(model), x, y, spec, cfg, rng, eps).x_adv


def select_restart(
    oracle: ModelLoss,
    candidates: List[np.ndarray],
    y: int,
    rng: np.random.Generator,
) -> int:
    """Index of the best candidate: misclassifying first, then highest loss, then earliest."""
    best_index = 0
    best_key = (False, -np.inf)
    for index, candidate in enumerate(candidates):
        key = (oracle.predict(candidate, rng) != y, oracle.loss(candidate, y, rng))
        if key > best_key:
            best_index, best_key = index, key
    return best_index


def restart_candidates(
    oracle: ModelLoss,
    x: np.ndarray,
    y: int,
    spec: PerturbSpec,
    cfg: PgdConfig,
    rng: np.random.Generator,
    eps: Optional[float] = None,
) -> List[np.ndarray]:
    """All restart outputs.

    Restart 0 uses rng itself, so it coincides with a single pgd call; later
    restarts run on child streams keyed by their restart index.
    """
    streams = restart_generators(rng, cfg.restarts)
    return [run_pgd(oracle, x, y, spec, cfg, stream, eps).x_adv for stream in streams]


def pgd_restarts(
    model: Classifier,
    x: np.ndarray,
    y: int,
    spec: PerturbSpec,
    cfg: PgdConfig,
    rng: np.random.Generator,
    eps: Optional[float] = None,
    oracle: Optional[ModelLoss] = None,
) -> np.ndarray:
    """Best of cfg.restarts independent PGD runs.

    Args:
        model: Classifier under attack
        x: Ball center
        y: Label whose loss is maximized
        spec: Norm order and default budget
        cfg: PGD settings including restarts
        rng: Generator
        eps: Budget override
        oracle: Loss view; the base classifier when None

    Returns:
        Selected adversarial point
    """
    view = oracle if oracle is not None else ModelLoss(model)
    candidates = restart_candidates(view, x, y, spec, cfg, rng, eps)
    return candidates[select_restart(view, candidates, y, rng)]


def randomized_pgd(
    model: Classifier,
    x: np.ndarray,
    y: int,
    spec: PerturbSpec,
    cfg: PgdConfig,
    sigma: float,
    M: int,
    rng: np.random.Generator,
    eps: Optional[float] = None,
) -> np.ndarray:
    """PGD on -log of the M-sample smoothed soft classifier; sigma = 0 is plain pgd."""
    return run_pgd(SmoothedLoss(model, sigma, M), x, y, spec, cfg, rng, eps).x_adv
