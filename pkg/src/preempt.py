"""Preemptive robustification.

This module contains the defender's bi-level loop that handles:
- Moving an image inside its delta ball so PGD around it fails
- First-order and exact update gradients through the inner attack
- Projected gradient descent and tanh/RMSProp outer optimizers
- The h-tilde <= -log(0.5) prediction-preservation certificate

The same loop, run uphill from x_r, is the white-box adversary's reconstruction.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .attack import PgdResult, restart_candidates, run_pgd
from .classifier import Classifier
from .constants import (
    EXACT_MAX_DIM,
    GRAD_SPIKE_RATIO,
    LEMMA1_RESTARTS,
    LEMMA1_THRESHOLD,
    RMSPROP_DAMPING,
    RMSPROP_DECAY,
    ZERO_GRAD_EPS,
)
from .errors import InvariantViolation, NumericalAbortError
from .geometry import (
    clamp_unit,
    fgsm_update,
    project_ball,
    sample_uniform_ball,
    tanh_reparam,
    tanh_reparam_grad_chain,
    tanh_reparam_inverse,
)
from .jacobian import hessian_fd, step_jacobian
from .losses import ModelLoss, SmoothedLoss
from .preempt_types import Lemma1Report, PerturbSpec, PgdConfig, RobustifyConfig

logger = logging.getLogger(__name__)

DESCEND = -1.0
ASCEND = 1.0


@dataclass
class RobustifyResult:
    """Output point with the per-iteration update-gradient l2 norms."""

    x_r: np.ndarray
    grad_norms: List[float]
    zero_grad_steps: int


def _in_cube(raw: np.ndarray) -> np.ndarray:
    return ((raw >= 0.0) & (raw <= 1.0)).astype(np.float64)


def _projection_jacobians(
    z: np.ndarray, center: np.ndarray, radius: float, p: float
) -> Tuple[np.ndarray, np.ndarray]:
    """d Pi / d z and d Pi / d center of the ball projection at z."""
    dim = z.shape[0]
    offset = z - center
    if math.isinf(p):
        inside = (np.abs(offset) <= radius).astype(np.float64)
        return np.diag(inside), np.diag(1.0 - inside)
    dist = float(np.linalg.norm(offset))
    if dist <= radius:
        return np.eye(dim), np.zeros((dim, dim))
    unit = offset / dist
    d_z = (radius / dist) * (np.eye(dim) - np.outer(unit, unit))
    return d_z, np.eye(dim) - d_z


def exact_gradient(
    oracle: ModelLoss,
    x_r: np.ndarray,
    result: PgdResult,
    y: int,
    spec: PerturbSpec,
    inner: PgdConfig,
) -> np.ndarray:
    """d loss(x^{a,T}) / d x_r through the whole PGD unroll.

    Forward-accumulates J_t = dx^{a,t}/dx_r with
    J_t = D_t (P_z F_t J_{t-1} + P_c), where F_t is the FGSM step Jacobian
    (identity for linf, closed form with a finite-difference Hessian for l2),
    P_z and P_c are the projection Jacobians in the point and the center, and
    D_t masks coordinates held by the unit-cube clamp.
    """
    dim = x_r.shape[0]
    if dim > EXACT_MAX_DIM:
        raise ValueError(f"exact update gradient needs input_dim <= {EXACT_MAX_DIM}, got {dim}")
    alpha = inner.alpha(spec.eps)
    rng = np.random.default_rng(0)

    def grad_at(z: np.ndarray) -> np.ndarray:
        return oracle.loss_and_grad(z, y, rng)[1]

    jac = np.diag(_in_cube(x_r + result.eta))
    for prev in result.trajectory[:-1]:
        grad = grad_at(prev)
        stepped, _ = fgsm_update(prev, grad, alpha, spec.p)
        if math.isinf(spec.p) or np.linalg.norm(grad) < ZERO_GRAD_EPS:
            step_jac = np.eye(dim)
        else:
            step_jac = step_jacobian(hessian_fd(grad_at, prev), grad, alpha)
        d_z, d_center = _projection_jacobians(stepped, x_r, spec.eps, spec.p)
        projected = project_ball(stepped, x_r, spec.eps, spec.p)
        jac = _in_cube(projected)[:, None] * (d_z @ step_jac @ jac + d_center)
    return jac.T @ grad_at(result.x_adv)


def update_gradient(
    model: Classifier,
    x_r: np.ndarray,
    adversarial_batch: Sequence[PgdResult],
    y: int,
    grad_mode: str,
    spec: PerturbSpec,
    inner: PgdConfig,
    oracle: Optional[ModelLoss] = None,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Mean over the batch of d loss(x^a_n, y) / d x_r.

    Args:
        model: Classifier
        x_r: Current robustified point the batch was generated around
        adversarial_batch: PGD runs around x_r
        y: Target label
        grad_mode: "first_order" (chain replaced by identity) or "exact"
        spec: Norm order and attack budget
        inner: PGD settings used for the batch
        oracle: Loss view; the base classifier when None
        rng: Generator for a stochastic oracle

    Returns:
        Update gradient, same shape as x_r
    """
    view = oracle if oracle is not None else ModelLoss(model)
    if grad_mode == "exact":
        if isinstance(view, SmoothedLoss) and view.sigma > 0:
            raise ValueError("exact update gradient is not defined for a smoothed loss")
        grads = [exact_gradient(view, x_r, res, y, spec, inner) for res in adversarial_batch]
    elif grad_mode == "first_order":
        stream = rng if rng is not None else np.random.default_rng(0)
        grads = [view.loss_and_grad(res.x_adv, y, stream)[1] for res in adversarial_batch]
    else:
        raise ValueError(f"unknown grad_mode {grad_mode!r}")
    total = np.zeros_like(x_r)
    for grad in grads:
        total = total + grad
    return total / len(grads)


def _initial_point(
    center: np.ndarray, spec: PerturbSpec, cfg: RobustifyConfig, rng: np.random.Generator
) -> np.ndarray:
    if cfg.init_mode == "at_original":
        return center.copy()
    eta = sample_uniform_ball(center.shape[0], spec.budget, spec.p, rng)
    return clamp_unit(project_ball(center + eta, center, spec.budget, spec.p))


def bilevel_loop(
    oracle: ModelLoss,
    center: np.ndarray,
    label: int,
    spec: PerturbSpec,
    cfg: RobustifyConfig,
    rng: np.random.Generator,
    direction: float,
) -> RobustifyResult:
    """Outer optimization over the delta ball around center.

    Each iteration draws N PGD runs around the current point, averages their
    update gradients and takes one outer step along direction times the
    gradient (DESCEND for robustification, ASCEND for reconstruction).

    Args:
        oracle: Loss view used by the inner attacks and the update gradient
        center: Ball center; also the starting point for at_original
        label: Label whose worst-case loss is optimized
        spec: Norm order, attack budget eps and outer budget delta
        cfg: Loop settings
        rng: Generator for inner random starts and noise
        direction: DESCEND or ASCEND

    Returns:
        RobustifyResult with the final point and gradient-norm trace
    """
    if cfg.optimizer == "tanh_rmsprop" and not math.isinf(spec.p):
        raise ValueError("tanh_rmsprop is only defined for p = inf")
    model = oracle.model
    delta = spec.budget
    beta = cfg.beta(spec.p)
    x_cur = _initial_point(center, spec, cfg, rng)
    w = tanh_reparam_inverse(center, x_cur, delta)
    second_moment = np.zeros_like(center)
    grad_norms: List[float] = []
    zero_steps = 0
    spiked = False

    for iteration in range(cfg.max_iter):
        batch = [run_pgd(oracle, x_cur, label, spec, cfg.inner, rng) for _ in range(cfg.n_samples)]
        zero_steps += sum(res.zero_grad_steps for res in batch)
        grad = update_gradient(
            model, x_cur, batch, label, cfg.grad_mode, spec, cfg.inner, oracle, rng
        )
        norm = float(np.linalg.norm(grad))
        if not np.all(np.isfinite(grad)):
            raise NumericalAbortError(
                f"non-finite update gradient at iteration {iteration} "
                f"({cfg.grad_mode}, norm {norm})"
            )
        if cfg.grad_mode == "exact" and grad_norms and not spiked:
            if grad_norms[0] > 0 and norm > GRAD_SPIKE_RATIO * grad_norms[0]:
                spiked = True
                logger.warning(
                    "Exact update gradient spiked at iteration %d: norm %.6g vs %.6g at start",
                    iteration,
                    norm,
                    grad_norms[0],
                )
        grad_norms.append(norm)
        logger.debug("Outer iteration %d: update gradient norm %.6g", iteration, norm)

        if cfg.optimizer == "projected_gd":
            x_cur = clamp_unit(project_ball(x_cur + direction * beta * grad, center, delta, spec.p))
        else:
            grad_w = grad * tanh_reparam_grad_chain(center, w, delta)
            second_moment = RMSPROP_DECAY * second_moment + (1.0 - RMSPROP_DECAY) * grad_w**2
            w = w + direction * beta * grad_w / (np.sqrt(second_moment) + RMSPROP_DAMPING)
            x_cur = tanh_reparam(center, w, delta)

    return RobustifyResult(x_cur, grad_norms, zero_steps)


def robustify_with_trace(
    model: Classifier,
    x_o: np.ndarray,
    spec: PerturbSpec,
    cfg: RobustifyConfig,
    rng: np.random.Generator,
    oracle: Optional[ModelLoss] = None,
) -> RobustifyResult:
    """Robustify x_o toward its own predicted class and keep the gradient-norm trace."""
    view = oracle if oracle is not None else ModelLoss(model)
    label = view.predict(x_o, rng)
    return bilevel_loop(view, np.asarray(x_o, dtype=np.float64), label, spec, cfg, rng, DESCEND)


def robustify(
    model: Classifier,
    x_o: np.ndarray,
    spec: PerturbSpec,
    cfg: RobustifyConfig,
    rng: np.random.Generator,
    oracle: Optional[ModelLoss] = None,
) -> np.ndarray:
    """Find x_r in B_delta(x_o) that minimizes the worst-case loss of c(x_o).

    Args:
        model: Classifier
        x_o: Original image
        spec: Norm order with budgets eps (attacker) and delta (defender)
        cfg: Loop settings
        rng: Defender's generator
        oracle: Loss view; the base classifier when None

    Returns:
        Robustified image inside B_delta(x_o) and the unit cube
    """
    return robustify_with_trace(model, x_o, spec, cfg, rng, oracle).x_r


def reconstruct_config(cfg: RobustifyConfig) -> RobustifyConfig:
    """Reconstruction always starts at the observed point."""
    return replace(cfg, init_mode="at_original")


def lemma1_verdict(h_tilde: float, preserved: bool) -> Lemma1Report:
    """Build the certificate report for a given worst-case loss estimate.

    Raises:
        InvariantViolation: The bound holds but the prediction changed
    """
    satisfied = h_tilde <= LEMMA1_THRESHOLD
    if satisfied and not preserved:
        raise InvariantViolation(
            f"h_tilde {h_tilde:.6g} <= {LEMMA1_THRESHOLD:.6g} but the predicted class changed"
        )
    return Lemma1Report(
        h_tilde=h_tilde,
        satisfied=satisfied,
        implied_bound=2.0 * h_tilde if satisfied else None,
        preserved=preserved,
    )


def check_lemma1(
    model: Classifier,
    x_o: np.ndarray,
    x_r: np.ndarray,
    spec: PerturbSpec,
    attack_cfg: Optional[PgdConfig],
    rng: np.random.Generator,
) -> Lemma1Report:
    """Estimate h_tilde(x_r) with restarted PGD and check prediction preservation.

    h_tilde is the largest loss of c(x_o) over all restart outputs and x_r itself.
    """
    cfg = attack_cfg if attack_cfg is not None else PgdConfig(restarts=LEMMA1_RESTARTS)
    oracle = ModelLoss(model)
    label = oracle.predict(x_o, rng)
    candidates = restart_candidates(oracle, x_r, label, spec, cfg, rng)
    h_tilde = max(model.loss(point, label) for point in [x_r, *candidates])
    report = lemma1_verdict(h_tilde, int(model.predict(x_r)) == label)
    if not report.satisfied:
        logger.warning(
            "h_tilde %.4f above %.4f; prediction preservation is not certified",
            h_tilde,
            LEMMA1_THRESHOLD,
        )
    return report
