"""Randomized smoothing.

This module contains the smoothed classifier operations that handle:
- Majority-vote prediction under Gaussian input noise
- The Monte-Carlo smoothed soft classifier and its gradient
- Robustification against the smoothed classifier
- Certified l2 radii with Clopper-Pearson bounds, and a soundness spot-check
"""

import logging
from typing import List, Optional, Tuple

import numpy as np
from scipy.stats import norm
from statsmodels.stats.proportion import proportion_confint

from .attack import randomized_pgd
from .classifier import Classifier
from .constants import ABSTAIN, SOUNDNESS_ATTACKS, SOUNDNESS_RADIUS_FRACTION
from .losses import SmoothedLoss
from .preempt import robustify
from .preempt_types import CertifyResult, PerturbSpec, PgdConfig, RobustifyConfig, SmoothConfig

logger = logging.getLogger(__name__)


def smoothed_loss(model: Classifier, cfg: SmoothConfig) -> SmoothedLoss:
    """Loss oracle of the smoothed soft classifier."""
    return SmoothedLoss(model, cfg.sigma, cfg.M, cfg.n_pred)


def smoothed_predict(
    model: Classifier, x: np.ndarray, cfg: SmoothConfig, rng: np.random.Generator
) -> int:
    """Majority vote of the base classifier over n_pred noisy copies of x."""
    return smoothed_loss(model, cfg).predict(x, rng)


def smoothed_soft(
    model: Classifier,
    x: np.ndarray,
    y: int,
    cfg: SmoothConfig,
    rng: np.random.Generator,
    noise: Optional[np.ndarray] = None,
) -> Tuple[float, np.ndarray]:
    """Monte-Carlo estimate of C~(x)_y over M samples and its input gradient.

    Args:
        model: Base classifier
        x: Input
        y: Class whose probability is estimated
        cfg: Smoothing settings (sigma, M)
        rng: Generator for the noise
        noise: Fixed M x dim noise realization; drawn when None

    Returns:
        (probability, gradient of the estimator)
    """
    if cfg.sigma == 0:
        prob = float(model.probabilities(x)[y])
        return prob, -prob * model.input_grad(x, y)
    oracle = smoothed_loss(model, cfg)
    if noise is None:
        noise = oracle.draw_noise(x.shape[-1], cfg.M, rng)
    return oracle.soft_with_noise(x, y, noise)


def robustify_smoothed(
    model: Classifier,
    x_o: np.ndarray,
    spec: PerturbSpec,
    r_cfg: RobustifyConfig,
    s_cfg: SmoothConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Robustification whose inner attacks are randomized PGD on the smoothed loss."""
    return robustify(model, x_o, spec, r_cfg, rng, smoothed_loss(model, s_cfg))


def clopper_pearson_lower(count: int, n: int, alpha: float) -> float:
    """One-sided (1 - alpha) Clopper-Pearson lower bound on a binomial proportion."""
    return float(proportion_confint(count, n, alpha=2 * alpha, method="beta")[0])


def certified_radius(p_lower: float, sigma: float) -> float:
    """sigma * Phi^-1(p_lower); 0 at p_lower = 0.5."""
    return float(sigma * norm.ppf(p_lower))


def certify(
    model: Classifier, x: np.ndarray, cfg: SmoothConfig, rng: np.random.Generator
) -> CertifyResult:
    """Two-stage Monte-Carlo certification.

    n_pred samples pick the candidate class; n_cert fresh samples bound its
    probability from below. The two stages use separate child generators.

    Returns:
        CertifyResult; ABSTAIN when the lower bound is under 0.5
    """
    oracle = smoothed_loss(model, cfg)
    select_rng = np.random.default_rng(int(rng.integers(2**63)))
    estimate_rng = np.random.default_rng(int(rng.integers(2**63)))
    candidate = int(np.argmax(oracle.votes(x, cfg.n_pred, select_rng)))
    count = int(oracle.votes(x, cfg.n_cert, estimate_rng)[candidate])
    p_lower = clopper_pearson_lower(count, cfg.n_cert, cfg.conf_alpha)
    if p_lower < 0.5:
        return CertifyResult(ABSTAIN, 0.0, p_lower, count)
    return CertifyResult(candidate, certified_radius(p_lower, cfg.sigma), p_lower, count)


def cert_eval(
    model: Classifier,
    images: np.ndarray,
    labels: np.ndarray,
    eps: float,
    cfg: SmoothConfig,
    rng: np.random.Generator,
) -> Tuple[float, List[CertifyResult]]:
    """Certified accuracy at radius eps; abstentions count as wrong.

    Returns:
        (fraction correct with radius >= eps, per-example results)
    """
    results = [certify(model, x, cfg, rng) for x in images]
    if not results:
        return 0.0, results
    hits = sum(
        1 for res, y in zip(results, labels) if res.predicted == int(y) and res.radius >= eps
    )
    abstains = sum(1 for res in results if res.abstain)
    if abstains > len(results) // 2:
        logger.warning("Certification abstained on %d of %d inputs", abstains, len(results))
    return hits / len(results), results


def soundness_check(
    model: Classifier,
    x: np.ndarray,
    result: CertifyResult,
    cfg: SmoothConfig,
    rng: np.random.Generator,
    attacks: int = SOUNDNESS_ATTACKS,
    attack_cfg: Optional[PgdConfig] = None,
) -> int:
    """Count smoothed-prediction flips under randomized PGD at 0.95 of the radius.

    Each attack point's class is re-estimated with n_cert samples.

    Returns:
        Number of flips (0 for a sound certificate)
    """
    budget = SOUNDNESS_RADIUS_FRACTION * result.radius
    if result.abstain or not budget > 0:
        return 0
    spec = PerturbSpec(2, budget)
    pgd_cfg = attack_cfg if attack_cfg is not None else PgdConfig()
    oracle = smoothed_loss(model, cfg)
    flips = 0
    for _ in range(attacks):
        x_adv = randomized_pgd(model, x, result.predicted, spec, pgd_cfg, cfg.sigma, cfg.M, rng)
        if oracle.predict(x_adv, rng, cfg.n_cert) != result.predicted:
            flips += 1
    if flips:
        logger.error(
            "Certificate at radius %.4f broken by %d of %d attacks", result.radius, flips, attacks
        )
    return flips


def radius_ceiling(cfg: SmoothConfig) -> float:
    """Largest radius certify can return: all n_cert votes for the top class."""
    p_lower = clopper_pearson_lower(cfg.n_cert, cfg.n_cert, cfg.conf_alpha)
    return certified_radius(p_lower, cfg.sigma)
