"""Lp ball arithmetic.

This module contains the pure functions shared by every algorithm:
- Norms, ball projections and unit-cube clamping
- Uniform sampling in l2 and linf balls
- FGSM steps with the zero-gradient guard
- The tanh reparameterization of the linf defender ball

Every function works on a single vector or on a batch of row vectors
(norms are taken along the last axis).
"""

import math
from typing import Optional, Tuple, Union

import numpy as np

from .classifier import Classifier
from .constants import TANH_INIT_LIMIT, ZERO_GRAD_EPS
from .preempt_types import parse_norm

Flags = Union[bool, np.ndarray]


def lp_norm(v: np.ndarray, p: float) -> Union[float, np.ndarray]:
    """Norm along the last axis (a float for vectors, an array for batches)."""
    p = parse_norm(p)
    arr = np.asarray(v, dtype=np.float64)
    if math.isinf(p):
        out = np.abs(arr).max(axis=-1) if arr.shape[-1] else np.zeros(arr.shape[:-1])
    else:
        out = np.sqrt((arr * arr).sum(axis=-1))
    return float(out) if arr.ndim == 1 else out


def clamp_unit(x: np.ndarray) -> np.ndarray:
    """Clamp pixel values to the unit cube."""
    return np.clip(x, 0.0, 1.0)


def _check_pair(x: np.ndarray, center: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    x_arr = np.asarray(x, dtype=np.float64)
    c_arr = np.asarray(center, dtype=np.float64)
    if x_arr.shape[-1] != c_arr.shape[-1]:
        raise ValueError(f"dimension mismatch: {x_arr.shape} vs center {c_arr.shape}")
    return x_arr, c_arr


def project_ball(x: np.ndarray, center: np.ndarray, radius: float, p: float) -> np.ndarray:
    """Project x onto the closed p-ball of the given radius around center.

    Points already inside are returned unchanged. For linf the projection is a
    per-coordinate clamp; for l2 the offset is rescaled by radius / ||x - center||.

    Args:
        x: Point or batch of points
        center: Ball center (broadcast against x)
        radius: Ball radius, >= 0
        p: 2 or inf

    Returns:
        Projected point(s)
    """
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    p = parse_norm(p)
    x_arr, c_arr = _check_pair(x, center)
    if math.isinf(p):
        return np.clip(x_arr, c_arr - radius, c_arr + radius)
    offset = x_arr - c_arr
    dist = np.sqrt((offset * offset).sum(axis=-1, keepdims=True))
    outside = dist > radius
    if not np.any(outside):
        return x_arr.copy()
    scale = np.where(outside, radius / np.where(outside, dist, 1.0), 1.0)
    return np.where(outside, c_arr + offset * scale, x_arr)


def projection_factor(x: np.ndarray, center: np.ndarray, radius: float) -> float:
    """The k of the l2 projection written as k (x - center) + center, 0 < k <= 1."""
    x_arr, c_arr = _check_pair(x, center)
    dist = float(np.linalg.norm(x_arr - c_arr))
    if dist <= radius:
        return 1.0
    return radius / dist


def sample_uniform_ball(
    dim: int,
    radius: float,
    p: float,
    rng: np.random.Generator,
    size: Optional[int] = None,
) -> np.ndarray:
    """Draw uniformly from the p-ball of the given radius around 0.

    linf draws each coordinate from U[-radius, radius]. l2 normalizes a
    Gaussian direction and scales it by radius * u ** (1 / dim). A zero radius
    returns zeros without consuming the generator.

    Args:
        dim: Dimension, >= 1
        radius: Ball radius, >= 0
        p: 2 or inf
        rng: Random generator
        size: Optional number of rows

    Returns:
        Vector of length dim, or a (size, dim) batch
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    p = parse_norm(p)
    shape = (dim,) if size is None else (size, dim)
    if radius == 0:
        return np.zeros(shape)
    if math.isinf(p):
        return rng.uniform(-radius, radius, size=shape)
    direction = rng.standard_normal(shape)
    length = np.sqrt((direction * direction).sum(axis=-1, keepdims=True))
    direction = direction / np.where(length > 0, length, 1.0)
    u = rng.uniform(0.0, 1.0, size=shape[:-1] + (1,))
    sample = direction * (radius * u ** (1.0 / dim))
    return project_ball(sample, np.zeros(dim), radius, p)


def fgsm_direction(grad: np.ndarray, p: float) -> Tuple[np.ndarray, Flags]:
    """Ascent direction of an FGSM step.

    Args:
        grad: Loss gradient (vector or batch)
        p: 2 or inf

    Returns:
        (direction, zero_flags): sign(grad) with sign(0) = 0 for linf; the
        normalized gradient for l2, or zeros flagged where ||grad|| < 1e-12
    """
    p = parse_norm(p)
    g = np.asarray(grad, dtype=np.float64)
    if math.isinf(p):
        return np.sign(g), (False if g.ndim == 1 else np.zeros(g.shape[0], dtype=bool))
    length = np.sqrt((g * g).sum(axis=-1, keepdims=True))
    small = length < ZERO_GRAD_EPS
    direction = np.where(small, 0.0, g / np.where(small, 1.0, length))
    flags: Flags = bool(small[0]) if g.ndim == 1 else small[:, 0]
    return direction, flags


def fgsm_update(
    x: np.ndarray, grad: np.ndarray, alpha: float, p: float
) -> Tuple[np.ndarray, Flags]:
    """x + alpha * direction(grad); zero-gradient rows stay in place."""
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    direction, flags = fgsm_direction(grad, p)
    return x + alpha * direction, flags


def fgsm_step(
    x: np.ndarray, y: int, model: Classifier, alpha: float, p: float
) -> Tuple[np.ndarray, bool]:
    """One FGSM step increasing the loss of label y at x.

    Returns:
        (new point, zero-gradient flag); a flagged l2 step returns x unchanged
    """
    new_x, flag = fgsm_update(x, model.input_grad(x, y), alpha, p)
    return new_x, bool(flag)


def _require_linf(p: float) -> None:
    if not math.isinf(parse_norm(p)):
        raise ValueError("the tanh reparameterization is only defined for p = inf")


def tanh_reparam(
    x_o: np.ndarray, w: np.ndarray, delta: float, p: float = math.inf
) -> np.ndarray:
    """x_r(w) = clamp(x_o + delta * tanh(w)); w = 0 maps to x_o."""
    _require_linf(p)
    return clamp_unit(x_o + delta * np.tanh(w))


def tanh_reparam_grad_chain(
    x_o: np.ndarray, w: np.ndarray, delta: float, p: float = math.inf
) -> np.ndarray:
    """Elementwise dx_r/dw = delta * (1 - tanh(w)^2), zero where the cube clamp is active."""
    _require_linf(p)
    t = np.tanh(w)
    raw = x_o + delta * t
    unclipped = (raw >= 0.0) & (raw <= 1.0)
    return np.where(unclipped, delta * (1.0 - t * t), 0.0)


def tanh_reparam_inverse(x_o: np.ndarray, x: np.ndarray, delta: float) -> np.ndarray:
    """A w with tanh_reparam(x_o, w, delta) == x for x inside the delta box."""
    if delta == 0:
        return np.zeros_like(np.asarray(x_o, dtype=np.float64))
    ratio = np.clip((x - x_o) / delta, -TANH_INIT_LIMIT, TANH_INIT_LIMIT)
    return np.arctanh(ratio)
