"""Adaptive white-box adversary.

This module contains the attacker that knows the robustification algorithm:
- Reconstruction of the original by running the defender's loop uphill
- An eps' sweep of restarted PGD around the reconstruction
- Validity-aware robustness verdicts and distance statistics
"""

import logging
import math
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .attack import pgd_restarts
from .classifier import Classifier
from .constants import HISTOGRAM_BUCKETS_PER_EPS, NEAR_BOUNDARY_HIGH, NEAR_BOUNDARY_LOW
from .geometry import lp_norm
from .losses import ModelLoss
from .preempt import ASCEND, bilevel_loop, reconstruct_config
from .preempt_types import (
    DistanceStats,
    PerturbSpec,
    RobustifyConfig,
    WhiteboxCandidate,
    WhiteboxConfig,
    WhiteboxResult,
    WhiteboxVerdict,
)

logger = logging.getLogger(__name__)

Predictor = Callable[[np.ndarray], int]


def reconstruct(
    model: Classifier,
    x_r: np.ndarray,
    spec: PerturbSpec,
    cfg: RobustifyConfig,
    rng: np.random.Generator,
    oracle: Optional[ModelLoss] = None,
) -> np.ndarray:
    """Estimate the original image behind a robustified one.

    Starts at x_r and ascends the worst-case loss of c(x_r) inside B_delta(x_r).

    Args:
        model: Classifier
        x_r: Observed (robustified) image
        spec: Norm order and budgets; delta bounds the search
        cfg: The defender's loop settings
        rng: Adversary's generator
        oracle: Loss view; the base classifier when None

    Returns:
        Reconstruction within delta of x_r
    """
    view = oracle if oracle is not None else ModelLoss(model)
    x_r = np.asarray(x_r, dtype=np.float64)
    label = view.predict(x_r, rng)
    return bilevel_loop(view, x_r, label, spec, reconstruct_config(cfg), rng, ASCEND).x_r


def whitebox_attack(
    model: Classifier,
    x_r: np.ndarray,
    y_o: int,
    spec: PerturbSpec,
    wb_cfg: WhiteboxConfig,
    rng: np.random.Generator,
    oracle: Optional[ModelLoss] = None,
) -> WhiteboxResult:
    """Reconstruct, then attack the reconstruction at every eps' of the sweep."""
    view = oracle if oracle is not None else ModelLoss(model)
    eps_primes = wb_cfg.eps_primes(spec.eps)
    if any(not 0 < e <= spec.eps for e in eps_primes):
        raise ValueError(f"every eps' must lie in (0, {spec.eps}], got {eps_primes}")
    x_hat = reconstruct(model, x_r, spec, wb_cfg.recon, rng, view)
    candidates: List[WhiteboxCandidate] = []
    for eps_prime in eps_primes:
        x_adv = pgd_restarts(model, x_hat, y_o, spec, wb_cfg.attack, rng, eps_prime, view)
        candidates.append(WhiteboxCandidate(eps_prime, x_adv, view.predict(x_adv, rng)))
    return WhiteboxResult(x_hat, candidates)


def eval_whitebox(
    records: Sequence[WhiteboxCandidate],
    x_o: np.ndarray,
    y_o: int,
    model: Classifier,
    eps: float,
    p: float = math.inf,
    predict: Optional[Predictor] = None,
) -> WhiteboxVerdict:
    """Robust iff every candidate is classified y_o or lies outside B_eps(x_o).

    Args:
        records: Candidates from whitebox_attack
        x_o: Held-out original
        y_o: True label
        model: Classifier used for the verdict
        eps: Adversary budget
        p: Norm order
        predict: Replaces model.predict (e.g. the smoothed vote)

    Returns:
        WhiteboxVerdict with per-candidate distances and flags
    """
    classify = predict if predict is not None else (lambda z: int(model.predict(z)))
    dists = [float(lp_norm(c.x_adv - x_o, p)) for c in records]
    misclassified = [classify(c.x_adv) != y_o for c in records]
    valid = [d <= eps for d in dists]
    robust = all(not (m and v) for m, v in zip(misclassified, valid))
    return WhiteboxVerdict(robust, dists, misclassified, valid)


def distance_stats(
    recon_dists: Sequence[float], attack_dists: Sequence[float], eps: float
) -> DistanceStats:
    """Fractions of reconstructions near the eps sphere and of attacks outside the ball."""
    recon = list(recon_dists)
    attack = list(attack_dists)
    low, high = NEAR_BOUNDARY_LOW * eps, NEAR_BOUNDARY_HIGH * eps
    near = sum(1 for d in recon if low <= d <= high)
    outside = sum(1 for d in attack if d > eps)
    return DistanceStats(
        recon_dists=recon,
        attack_dists=attack,
        frac_recon_near_boundary=near / len(recon) if recon else 0.0,
        frac_attack_outside=outside / len(attack) if attack else 0.0,
    )


def distance_histogram(
    dists: Sequence[float], eps: float
) -> List[Tuple[float, float, int]]:
    """Counts in buckets of width eps / 20 starting at 0; empty input gives no buckets."""
    if not dists:
        return []
    width = eps / HISTOGRAM_BUCKETS_PER_EPS
    n_buckets = max(1, int(math.ceil(max(dists) / width)))
    edges = width * np.arange(n_buckets + 1)
    counts, _ = np.histogram(np.asarray(dists), bins=edges)
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(n_buckets)]
