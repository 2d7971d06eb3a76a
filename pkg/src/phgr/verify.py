"""Randomised property battery for the ball geometry and the two inner products."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry as geo


@dataclass
class PropertyResult:
    name: str
    max_error: float
    tolerance: float
    strict: bool = False   # require max_error < tolerance

    @property
    def passed(self) -> bool:
        if self.strict:
            return bool(self.max_error < self.tolerance)
        return bool(self.max_error <= self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<44s} max_err={self.max_error:.3e}  tol={self.tolerance:.0e}"


def random_points(rng, n: int, dim: int, max_norm: float = 0.98, c: float = 1.0) -> np.ndarray:
    """Uniform directions with radii uniform in ``[0, max_norm/√c]``."""
    x = rng.normal(size=(n, dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x * rng.uniform(0.0, max_norm, size=(n, 1)) / np.sqrt(c)


def d_along_diagonal(r: float, beta: float, c: float = 1.0) -> float:
    """Geodesic inner product of two points of equal norm ``r`` separated by angle ``beta``."""
    cfg = geo.BallConfig(c=c, dim=2)
    u = np.array([r, 0.0])
    v = r * np.array([np.cos(beta), np.sin(beta)])
    return float(geo.poincare_inner(u, v, cfg))


def geometry_battery(samples: int = 10_000, c: float = 1.0, dims=(2, 8, 64), max_norm: float = 0.98,
                     seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    worst = {}

    def note(name, err, tol):
        prev = worst.get(name)
        worst[name] = (max(err, prev[0]) if prev else err, tol)

    for dim in dims:
        cfg = geo.BallConfig(c=c, dim=dim)
        u = random_points(rng, samples, dim, max_norm, c)
        v = random_points(rng, samples, dim, max_norm, c)
        zero = np.zeros(dim)

        P = geo.projected_inner(u, v, cfg)
        du = geo.inner_distance(zero, u, cfg)
        dv = geo.inner_distance(zero, v, cfg)
        cos = geo.euclidean_angle_cos(u, v)
        note("projected inner = d(0,u) d(0,v) cos(beta)", np.max(np.abs(P - du * dv * cos)), 1e-8)

        D = geo.poincare_inner(u, v, cfg)
        note("geodesic inner <= projected inner", max(0.0, float(np.max(D - P))), 1e-10)

        t = rng.uniform(-1.0, 1.0, size=(samples, 1))
        w = t * u
        note("geodesic == projected on collinear pairs",
             np.max(np.abs(geo.poincare_inner(u, w, cfg) - geo.projected_inner(u, w, cfg))), 1e-8)

        gap = np.linalg.norm(geo.log0(u, cfg) - geo.log0(v, cfg), axis=-1) - geo.inner_distance(u, v, cfg)
        note("distance >= tangent difference norm", max(0.0, float(np.max(gap))), 1e-10)

        note("||log0(u)|| = d(0,u)", np.max(np.abs(np.linalg.norm(geo.log0(u, cfg), axis=-1) - du)), 1e-9)

        back = geo.exp_map(u, geo.log_map(u, v, cfg), cfg)
        note("exp_u(log_u(v)) = v", np.max(np.linalg.norm(back - v, axis=-1)), 1e-8)
        back0 = geo.exp0(geo.log0(v, cfg), cfg)
        note("exp_0(log_0(v)) = v", np.max(np.linalg.norm(back0 - v, axis=-1)), 1e-8)

        note("0 (+) v = v", np.max(np.linalg.norm(geo.mobius_add(zero, v, cfg) - v, axis=-1)), 1e-9)
        canc = geo.mobius_add(-u, geo.mobius_add(u, v, cfg), cfg)
        note("(-u) (+) (u (+) v) = v", np.max(np.linalg.norm(canc - v, axis=-1)), 1e-9)

    results = [PropertyResult(k, float(e), tol) for k, (e, tol) in worst.items()]
    d_mid = d_along_diagonal(0.5, np.pi / 4, c)
    d_low = d_along_diagonal(0.05, np.pi / 4, c)
    d_high = d_along_diagonal(0.98, np.pi / 4, c)
    # negative margin means D rises then falls along the diagonal
    results.append(PropertyResult("D(0.5) > D(0.05) and D(0.5) > D(0.98) at pi/4",
                                  max(d_low, d_high) - d_mid, 0.0, strict=True))
    return results
