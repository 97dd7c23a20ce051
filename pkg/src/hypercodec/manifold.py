"""Poincare-ball primitives with analytic vector-Jacobian products.

Points live in the open ball ``{v : c * |v|^2 < 1}`` (curvature ``-c``).  Every
function works on float64 arrays whose last axis holds the coordinates, so a
single call can process a stack of points.

Two numerical guards are applied throughout:

* outputs that land on or past the boundary are pulled back to norm
  ``(1 - BALL_EPS) / sqrt(c)``;
* the ``artanh`` argument inside the distance is clamped at ``ARTANH_CLAMP``.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NumericDomainError, StructuralError

BALL_EPS = 1e-5
ARTANH_CLAMP = 1.0 - 1e-7
SMALL_NORM = 1e-12


def _check_curvature(c: float) -> float:
    c = float(c)
    if not (c > 0.0 and math.isfinite(c)):
        raise NumericDomainError(f"curvature magnitude must be positive and finite, got {c}")
    return c


def _as_points(v, name: str = "x") -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 0:
        raise StructuralError(f"{name} must have at least one axis")
    if not np.all(np.isfinite(v)):
        raise NumericDomainError(f"{name} contains NaN or Inf")
    return v


def _same_dim(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape[-1] != y.shape[-1]:
        raise StructuralError(f"dimension mismatch: {x.shape[-1]} vs {y.shape[-1]}")


def max_norm(c: float) -> float:
    return (1.0 - BALL_EPS) / math.sqrt(c)


def project_to_ball(v, c: float = 1.0) -> np.ndarray:
    """Rescale rows whose norm reaches the boundary margin; leave others untouched."""
    c = _check_curvature(c)
    v = _as_points(v, "v")
    limit = 1.0 - BALL_EPS
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    outside = c * norm**2 >= limit**2
    if not np.any(outside):
        return v.copy()
    safe = np.where(outside, norm, 1.0)
    return np.where(outside, v / safe * max_norm(c), v)


def in_ball(v, c: float = 1.0) -> bool:
    """True when every row satisfies ``sqrt(c) |v| <= 1 - BALL_EPS`` (with rounding slack)."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1)
    return bool(np.all(math.sqrt(c) * norm <= 1.0 - BALL_EPS + 1e-15))


def mobius_add(x, y, c: float = 1.0) -> np.ndarray:
    """Gyrovector addition ``x (+)_c y``; the result is kept inside the ball."""
    c = _check_curvature(c)
    x = _as_points(x, "x")
    y = _as_points(y, "y")
    _same_dim(x, y)
    xy = np.sum(x * y, axis=-1, keepdims=True)
    x2 = np.sum(x * x, axis=-1, keepdims=True)
    y2 = np.sum(y * y, axis=-1, keepdims=True)
    num = (1.0 + 2.0 * c * xy + c * y2) * x + (1.0 - c * x2) * y
    den = 1.0 + 2.0 * c * xy + c * c * x2 * y2
    return project_to_ball(num / den, c)


def exp_map_origin(y, c: float = 1.0) -> np.ndarray:
    """Map tangent vectors at the origin onto the ball: ``tanh(sqrt(c)|y|) y / (sqrt(c)|y|)``.

    Note there is no factor 1/2 inside the tanh, so ``d(0, exp_map_origin(y)) == 2|y|``.
    """
    c = _check_curvature(c)
    y = _as_points(y, "y")
    sc = math.sqrt(c)
    n = np.linalg.norm(y, axis=-1, keepdims=True)
    small = n < SMALL_NORM
    safe = np.where(small, 1.0, n)
    # tanh(x)/x -> 1 - x^2/3 near zero
    factor = np.where(small, 1.0 - (sc * n) ** 2 / 3.0, np.tanh(sc * safe) / (sc * safe))
    return project_to_ball(factor * y, c)


def exp_map_origin_vjp(y, grad_out, c: float = 1.0) -> np.ndarray:
    """Pull ``grad_out`` back through :func:`exp_map_origin` (including the boundary clamp)."""
    c = _check_curvature(c)
    y = np.asarray(y, dtype=np.float64)
    g = np.asarray(grad_out, dtype=np.float64)
    sc = math.sqrt(c)
    n = np.linalg.norm(y, axis=-1, keepdims=True)
    small = n < SMALL_NORM
    safe = np.where(small, 1.0, n)
    th = np.tanh(sc * safe)
    f = th / sc
    clamped = (sc * f >= 1.0 - BALL_EPS) & ~small
    f = np.where(clamped, max_norm(c), f)
    fprime = np.where(clamped, 0.0, 1.0 - th * th)
    unit = y / safe
    radial = np.sum(unit * g, axis=-1, keepdims=True)
    out = (f / safe) * g + (fprime - f / safe) * radial * unit
    return np.where(small, g, out)


def geodesic_distance(x, y, c: float = 1.0) -> np.ndarray | float:
    """``(2/sqrt(c)) artanh(sqrt(c) |(-x) (+)_c y|)``, row-wise over leading axes.

    The Mobius-difference norm is taken from the same closed form as
    :func:`pairwise_distance`, which is exactly symmetric in floating point.
    """
    c = _check_curvature(c)
    x = _as_points(x, "x")
    y = _as_points(y, "y")
    _same_dim(x, y)
    sc = math.sqrt(c)
    diff = x - y
    delta = np.sum(diff * diff, axis=-1)
    ab = (1.0 - c * np.sum(x * x, axis=-1)) * (1.0 - c * np.sum(y * y, axis=-1))
    arg = np.minimum(np.sqrt(c * delta / (c * delta + ab)), ARTANH_CLAMP)
    d = 2.0 / sc * np.arctanh(arg)
    return float(d) if d.ndim == 0 else d


def pairwise_distance(X, Y, c: float = 1.0) -> np.ndarray:
    """All geodesic distances between rows of ``X`` (m, h) and ``Y`` (k, h) as an (m, k) array.

    Uses the closed form ``c|w|^2 = c delta / (c delta + alpha beta)`` for the Mobius
    difference ``w``, where ``delta = |x - y|^2`` and ``alpha, beta`` are the conformal
    denominators; this keeps ``d(x, x)`` exactly zero.
    """
    c = _check_curvature(c)
    X = _as_points(X, "X")
    Y = _as_points(Y, "Y")
    _same_dim(X, Y)
    delta, alpha, beta = _pair_terms(X, Y, c)
    arg = np.minimum(np.sqrt(c * delta / (c * delta + alpha[:, None] * beta[None, :])), ARTANH_CLAMP)
    return 2.0 / math.sqrt(c) * np.arctanh(arg)


def _pair_terms(X, Y, c):
    diff = X[:, None, :] - Y[None, :, :]
    delta = np.einsum("mkh,mkh->mk", diff, diff)
    alpha = 1.0 - c * np.einsum("mh,mh->m", X, X)
    beta = 1.0 - c * np.einsum("kh,kh->k", Y, Y)
    return delta, alpha, beta


def pairwise_distance_vjp(X, Y, grad_out, c: float = 1.0):
    """Gradients of ``sum(grad_out * pairwise_distance(X, Y))`` w.r.t. ``X`` and ``Y``.

    Coincident pairs and pairs clamped at the boundary contribute zero.
    """
    c = _check_curvature(c)
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    G = np.asarray(grad_out, dtype=np.float64)
    delta, alpha, beta = _pair_terms(X, Y, c)
    ab = alpha[:, None] * beta[None, :]
    live = (delta > 0.0) & (np.sqrt(c * delta / (c * delta + ab)) < ARTANH_CLAMP)
    u = np.where(live, 2.0 * c * delta / ab, 1.0)
    dd_du = 1.0 / (math.sqrt(c) * np.sqrt(u * (u + 2.0)))
    coef = np.where(live, G * dd_du * 4.0 * c / ab, 0.0)
    cd = coef * c * delta
    gX = np.einsum("mk,mh->mh", coef, X) - coef @ Y + X * (cd.sum(axis=1) / alpha)[:, None]
    gY = np.einsum("mk,kh->kh", coef, Y) - coef.T @ X + Y * (cd.sum(axis=0) / beta)[:, None]
    return gX, gY


def grad_geodesic_distance(x, y, c: float = 1.0):
    """Analytic ``(dd/dx, dd/dy, degenerate)`` for a single pair of points.

    At coincident points the distance is not differentiable; both gradients are
    returned as zeros and ``degenerate`` is True.
    """
    x = _as_points(x, "x")
    y = _as_points(y, "y")
    _same_dim(x, y)
    if x.ndim != 1:
        raise StructuralError("grad_geodesic_distance expects single points")
    if np.array_equal(x, y):
        return np.zeros_like(x), np.zeros_like(y), True
    gX, gY = pairwise_distance_vjp(x[None], y[None], np.ones((1, 1)), c)
    return gX[0], gY[0], False


def euclidean_pairwise_distance(X, Y) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    _same_dim(X, Y)
    diff = X[:, None, :] - Y[None, :, :]
    return np.sqrt(np.einsum("mkh,mkh->mk", diff, diff))


def euclidean_pairwise_distance_vjp(X, Y, grad_out):
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    diff = X[:, None, :] - Y[None, :, :]
    dist = np.sqrt(np.einsum("mkh,mkh->mk", diff, diff))
    coef = np.where(dist > 0.0, grad_out / np.where(dist > 0.0, dist, 1.0), 0.0)
    g = coef[:, :, None] * diff
    return g.sum(axis=1), -g.sum(axis=0)
