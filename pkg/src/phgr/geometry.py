"""Poincaré-ball operations on plain numpy arrays.

Points and tangent vectors are float64 arrays whose last axis is the
embedding dimension; every operation broadcasts over leading axes.  This
module is the numerical reference: the differentiable versions used for
training live in :mod:`phgr.hyperbolic` and are checked against it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# largest argument handed to arctanh; boundary points would otherwise give inf
ATANH_MAX = 1.0 - 1e-12
# below this norm the direction term x / ||x|| is treated as 0/0
MIN_NORM = 1e-15


class DomainError(ValueError):
    """Raised for non-finite input or points outside the ball."""


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


@dataclass(frozen=True)
class BallConfig:
    """Curvature, boundary guard and dimension of a Poincaré ball.

    The ball has radius ``1/sqrt(c)`` and constant sectional curvature ``-c``.
    """

    c: float = 1.0
    dim: int = 2
    boundary_eps: float = 1e-5

    def __post_init__(self):
        if not (self.c > 0 and np.isfinite(self.c)):
            raise ValueError(f"curvature must be positive, got {self.c}")
        if not 0 < self.boundary_eps < 1:
            raise ValueError(f"boundary_eps must lie in (0, 1), got {self.boundary_eps}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim}")

    @property
    def sqrt_c(self) -> float:
        return float(np.sqrt(self.c))

    @property
    def max_norm(self) -> float:
        """Largest Euclidean norm any constructed point may have."""
        return (1.0 - self.boundary_eps) / self.sqrt_c


def _as_array(x, name="x") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite entries")
    return arr


def _norm(x: np.ndarray) -> np.ndarray:
    return np.linalg.norm(x, axis=-1, keepdims=True)


def _dot(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.sum(x * y, axis=-1, keepdims=True)


def _atanh(x):
    return np.arctanh(np.clip(x, 0.0, ATANH_MAX))


def check_point(x, cfg: BallConfig) -> np.ndarray:
    """Return ``x`` as an array after asserting strict ball membership."""
    arr = _as_array(x)
    if np.any(cfg.c * np.sum(arr * arr, axis=-1) >= 1.0):
        raise DomainError("point lies on or outside the ball boundary")
    return arr


def project_to_ball(x, cfg: BallConfig) -> np.ndarray:
    """Radially pull points with ``c||x||^2 > (1-eps)^2`` back to the guard radius.

    Points already inside the guard radius are returned unchanged (bitwise).
    """
    x = _as_array(x)
    norm = _norm(x)
    max_norm = cfg.max_norm
    scale = np.where(norm > max_norm, max_norm / np.maximum(norm, MIN_NORM), 1.0)
    return x * scale


def mobius_add(u, v, cfg: BallConfig) -> np.ndarray:
    """Möbius addition ``u ⊕_c v``.

    Parameters
    ----------
    u, v : array_like
        Ball points, broadcast against each other along leading axes.
    cfg : BallConfig

    Returns
    -------
    np.ndarray
        The gyrovector sum, re-guarded into the ball.
    """
    u = _as_array(u, "u")
    v = _as_array(v, "v")
    c = cfg.c
    uv = _dot(u, v)
    u2 = _dot(u, u)
    v2 = _dot(v, v)
    num = (1 + 2 * c * uv + c * v2) * u + (1 - c * u2) * v
    den = 1 + 2 * c * uv + c * c * u2 * v2
    return project_to_ball(num / den, cfg)


def conformal_factor(u, cfg: BallConfig) -> np.ndarray:
    """``λ_u = 2 / (1 - c||u||^2)``, shape ``u.shape[:-1] + (1,)``."""
    u = project_to_ball(u, cfg)
    return 2.0 / (1.0 - cfg.c * _dot(u, u))


def exp_map(base, x, cfg: BallConfig) -> np.ndarray:
    """Exponential map at ``base`` applied to tangent vector ``x``."""
    base = _as_array(base, "base")
    x = _as_array(x, "x")
    sc = cfg.sqrt_c
    norm = _norm(x)
    safe = np.maximum(norm, MIN_NORM)
    lam = conformal_factor(base, cfg)
    step = np.tanh(sc * lam * safe / 2.0) * x / (sc * safe)
    step = np.where(norm < MIN_NORM, 0.0, step)
    out = mobius_add(base, step, cfg)
    # exp_base(0) = base exactly
    return np.where(norm < MIN_NORM, project_to_ball(np.broadcast_to(base, out.shape), cfg), out)


def log_map(base, v, cfg: BallConfig) -> np.ndarray:
    """Logarithmic map: the tangent vector at ``base`` pointing to ``v``."""
    base = _as_array(base, "base")
    v = _as_array(v, "v")
    sc = cfg.sqrt_c
    w = mobius_add(-base, v, cfg)
    norm = _norm(w)
    safe = np.maximum(norm, MIN_NORM)
    lam = conformal_factor(base, cfg)
    out = 2.0 / (sc * lam) * _atanh(sc * safe) * w / safe
    return np.where(norm < MIN_NORM, 0.0, out)


def exp0(x, cfg: BallConfig) -> np.ndarray:
    """Exponential map at the origin, ``tanh(√c||x||) x / (√c||x||)``."""
    x = _as_array(x)
    sc = cfg.sqrt_c
    norm = _norm(x)
    safe = np.maximum(norm, MIN_NORM)
    out = np.tanh(sc * safe) * x / (sc * safe)
    return project_to_ball(np.where(norm < MIN_NORM, 0.0, out), cfg)


def log0(v, cfg: BallConfig) -> np.ndarray:
    """Logarithmic map at the origin, ``atanh(√c||v||) v / (√c||v||)``."""
    v = _as_array(v)
    sc = cfg.sqrt_c
    norm = _norm(v)
    safe = np.maximum(norm, MIN_NORM)
    out = _atanh(sc * safe) * v / (sc * safe)
    return np.where(norm < MIN_NORM, 0.0, out)


def _gyro_norm(u, v, cfg: BallConfig) -> np.ndarray:
    return _norm(mobius_add(-_as_array(u, "u"), v, cfg))[..., 0]


def distance(u, v, cfg: BallConfig) -> np.ndarray:
    """Geodesic distance ``(2/√c) atanh(√c ||-u ⊕ v||)``."""
    return 2.0 * inner_distance(u, v, cfg)


def inner_distance(u, v, cfg: BallConfig) -> np.ndarray:
    """Coefficient-free distance ``(1/√c) atanh(√c ||-u ⊕ v||)``.

    Half the geodesic distance; its value from the origin equals the norm of
    :func:`log0`, which is what makes it the right building block for
    :func:`poincare_inner`.
    """
    sc = cfg.sqrt_c
    return _atanh(sc * _gyro_norm(u, v, cfg)) / sc


def mobius_matvec(A, u, cfg: BallConfig) -> np.ndarray:
    """``A ⊗_c u = exp0(A log0(u))`` for an ``(m, n)`` matrix and ``n``-dim points."""
    A = _as_array(A, "A")
    u = _as_array(u, "u")
    if A.ndim != 2 or A.shape[1] != u.shape[-1]:
        raise ShapeError(f"cannot apply matrix of shape {A.shape} to points of dim {u.shape[-1]}")
    return exp0(log0(u, cfg) @ A.T, cfg)


def projected_inner(u, v, cfg: BallConfig) -> np.ndarray:
    """Two-stage inner product ``<log0(u), log0(v)>``."""
    return _dot(log0(u, cfg), log0(v, cfg))[..., 0]


def poincare_inner(u, v, cfg: BallConfig) -> np.ndarray:
    """Geodesic inner product ``½(d²(0,u) + d²(0,v) - d²(u,v))``.

    ``d`` is :func:`inner_distance`.  Never exceeds :func:`projected_inner`;
    the two agree when ``u`` and ``v`` are collinear through the origin.
    """
    u = _as_array(u, "u")
    v = _as_array(v, "v")
    zero = np.zeros(1)
    du = inner_distance(zero, u, cfg)
    dv = inner_distance(zero, v, cfg)
    duv = inner_distance(u, v, cfg)
    return 0.5 * (du**2 + dv**2 - duv**2)


def pairwise_inner_distance(U, V, cfg: BallConfig) -> np.ndarray:
    """Matrix of :func:`inner_distance` between rows of ``U`` (a, d) and ``V`` (b, d).

    Uses the closed form of ``||-u ⊕ v||²`` in terms of ``||u||², ||v||²`` and
    ``<u, v>`` so no ``(a, b, d)`` intermediate is formed.
    """
    U = _as_array(U, "U")
    V = _as_array(V, "V")
    c = cfg.c
    a2 = np.sum(U * U, axis=-1)[:, None]
    v2 = np.sum(V * V, axis=-1)[None, :]
    av = -(U @ V.T)
    A = 1 + 2 * c * av + c * v2
    B = 1 - c * a2
    num = A * A * a2 + 2 * A * B * av + B * B * v2
    den = 1 + 2 * c * av + c * c * a2 * v2
    gyro = np.sqrt(np.maximum(num, 0.0)) / den
    gyro = np.minimum(gyro, cfg.max_norm)
    return _atanh(cfg.sqrt_c * gyro) / cfg.sqrt_c


def pairwise_poincare_inner(U, V, cfg: BallConfig) -> np.ndarray:
    """Matrix of :func:`poincare_inner` between rows of ``U`` and ``V``."""
    sc = cfg.sqrt_c
    du = _atanh(sc * np.linalg.norm(U, axis=-1))[:, None] / sc
    dv = _atanh(sc * np.linalg.norm(V, axis=-1))[None, :] / sc
    return 0.5 * (du**2 + dv**2 - pairwise_inner_distance(U, V, cfg) ** 2)


def euclidean_angle_cos(u, v) -> np.ndarray:
    """Cosine of the Euclidean angle between ``u`` and ``v`` (0 if either is 0)."""
    u = _as_array(u, "u")
    v = _as_array(v, "v")
    den = _norm(u) * _norm(v)
    return np.where(den < MIN_NORM**2, 0.0, _dot(u, v) / np.maximum(den, MIN_NORM**2))[..., 0]
