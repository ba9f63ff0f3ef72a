"""Second-order diagnostics of the l2 FGSM dynamics.

This module contains the numerical checks on the Jacobian of one l2 PGD step:
- Finite-difference Hessians of the loss
- The closed-form Jacobian of x -> x + alpha * g / ||g|| against finite differences
- The spectral bound on the transposed step Jacobian applied to a vector
"""

import logging
from typing import Callable, Tuple

import numpy as np

from .classifier import Classifier
from .constants import (
    HESSIAN_FD_SCALE,
    JACOBIAN_FD_STEP,
    JACOBIAN_MAX_DIM,
    LEMMA2_GRAD_EPS,
)
from .preempt_types import JacobianCheck

logger = logging.getLogger(__name__)

GradFn = Callable[[np.ndarray], np.ndarray]

# Relative slack allowed on the spectral bound for float rounding
BOUND_RTOL = 1e-12


def hessian_fd(grad_fn: GradFn, x: np.ndarray, step: float = 0.0) -> np.ndarray:
    """Symmetrized Hessian from central differences of a gradient function.

    Args:
        grad_fn: Maps a point to the loss gradient there
        x: Evaluation point
        step: Difference step; 0 picks 1e-4 * (1 + ||x||)

    Returns:
        n x n symmetric matrix
    """
    h = step if step > 0 else HESSIAN_FD_SCALE * (1.0 + float(np.linalg.norm(x)))
    dim = x.shape[0]
    columns = []
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = h
        columns.append((grad_fn(x + e) - grad_fn(x - e)) / (2.0 * h))
    hessian = np.column_stack(columns)
    return 0.5 * (hessian + hessian.T)


def step_jacobian(hessian: np.ndarray, grad: np.ndarray, alpha: float) -> np.ndarray:
    """I + alpha * (I - u u^T) H / ||g|| with u = g / ||g||."""
    norm = float(np.linalg.norm(grad))
    unit = grad / norm
    eye = np.eye(grad.shape[0])
    projector = eye - np.outer(unit, unit)
    return eye + alpha * projector @ hessian / norm


def _l2_step(model: Classifier, x: np.ndarray, y: int, alpha: float) -> np.ndarray:
    grad = model.input_grad(x, y)
    return x + alpha * grad / np.linalg.norm(grad)


def _checked_grad(model: Classifier, x: np.ndarray, y: int) -> np.ndarray:
    if x.shape[0] > JACOBIAN_MAX_DIM:
        raise ValueError(
            f"Jacobian checks run at input_dim <= {JACOBIAN_MAX_DIM}, got {x.shape[0]}"
        )
    grad = model.input_grad(x, y)
    norm = float(np.linalg.norm(grad))
    if norm < LEMMA2_GRAD_EPS:
        raise ValueError(f"gradient norm {norm:.3g} below {LEMMA2_GRAD_EPS}; Jacobian is singular")
    return grad


def lemma2_jacobian(
    model: Classifier, x: np.ndarray, y: int, alpha: float
) -> JacobianCheck:
    """Compare the closed-form l2 FGSM Jacobian with a direct finite difference.

    Args:
        model: Classifier (tanh activations keep the loss twice differentiable)
        x: Evaluation point, input_dim <= 8
        y: Label of the loss
        alpha: FGSM step size

    Returns:
        JacobianCheck with both Jacobians and the max elementwise error
    """
    x = np.asarray(x, dtype=np.float64)
    grad = _checked_grad(model, x, y)
    hessian = hessian_fd(lambda z: model.input_grad(z, y), x)
    analytic = step_jacobian(hessian, grad, alpha)

    dim = x.shape[0]
    fd = np.empty((dim, dim))
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = JACOBIAN_FD_STEP
        fd[:, j] = (_l2_step(model, x + e, y, alpha) - _l2_step(model, x - e, y, alpha)) / (
            2.0 * JACOBIAN_FD_STEP
        )

    grad_norm = float(np.linalg.norm(grad))
    sigma = float(np.abs(np.linalg.eigvalsh(hessian)).max())
    error = float(np.abs(analytic - fd).max())
    logger.debug("Step Jacobian check: dim=%d max error %.3g", dim, error)
    return JacobianCheck(
        analytic_jacobian=analytic,
        fd_jacobian=fd,
        hessian=hessian,
        sigma=sigma,
        grad_norm=grad_norm,
        bound_factor=1.0 + alpha * sigma / grad_norm,
        projection_k=1.0,
        max_abs_error=error,
    )


def prop1_bound_check(
    model: Classifier,
    x: np.ndarray,
    y: int,
    alpha: float,
    a: np.ndarray,
    k: float,
) -> Tuple[bool, float]:
    """Check ||(k J)^T a|| <= (1 + alpha * sigma / ||g||) ||a|| for one step.

    k is the scale of the l2 projection written as k (x - c) + c.

    Returns:
        (holds, slack) where slack = right side - left side
    """
    if not 0 < k <= 1:
        raise ValueError(f"projection factor k must be in (0, 1], got {k}")
    x = np.asarray(x, dtype=np.float64)
    grad = _checked_grad(model, x, y)
    hessian = hessian_fd(lambda z: model.input_grad(z, y), x)
    jac = k * step_jacobian(hessian, grad, alpha)
    lhs = float(np.linalg.norm(jac.T @ a))
    sigma = float(np.abs(np.linalg.eigvalsh(hessian)).max())
    rhs = (1.0 + alpha * sigma / float(np.linalg.norm(grad))) * float(np.linalg.norm(a))
    return lhs <= rhs * (1.0 + BOUND_RTOL), rhs - lhs
