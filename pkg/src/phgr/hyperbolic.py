"""Differentiable Poincaré-ball and Euclidean operations over autodiff tensors.

Both spaces expose the same methods, so the model is written once and the
Euclidean ablation just swaps the space: exp/log become identity (at the
origin) or vector difference (at a base point), Möbius addition becomes
vector addition and the geodesic inner product becomes the dot product.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

MIN_NORM = 1e-15


class PoincareSpace:
    name = "poincare"

    def __init__(self, c: float = 1.0, boundary_eps: float = 1e-5, inner: str = "D"):
        if inner not in ("D", "P"):
            raise ValueError(f"inner must be 'D' or 'P', got {inner!r}")
        self.c = float(c)
        self.sqrt_c = float(np.sqrt(c))
        self.max_norm = (1.0 - boundary_eps) / self.sqrt_c
        self.inner = inner

    def project(self, x) -> Tensor:
        n = ad.norm(x, MIN_NORM)
        return ad.mul(x, ad.minimum(1.0, ad.div(self.max_norm, n)))

    def mobius_add(self, u, v) -> Tensor:
        c = self.c
        uv = ad.dot(u, v)
        u2 = ad.dot(u, u)
        v2 = ad.dot(v, v)
        a = 1.0 + ad.scale(uv, 2 * c) + ad.scale(v2, c)
        b = 1.0 - ad.scale(u2, c)
        den = 1.0 + ad.scale(uv, 2 * c) + ad.scale(ad.mul(u2, v2), c * c)
        return self.project(ad.div(ad.mul(a, u) + ad.mul(b, v), den))

    def conformal_factor(self, x) -> Tensor:
        return ad.div(2.0, 1.0 - ad.scale(ad.dot(x, x), self.c))

    def exp0(self, x) -> Tensor:
        n = ad.scale(ad.norm(x, MIN_NORM), self.sqrt_c)
        return self.project(ad.mul(ad.div(ad.tanh(n), n), x))

    def log0(self, y) -> Tensor:
        n = ad.scale(ad.norm(y, MIN_NORM), self.sqrt_c)
        return ad.mul(ad.div(ad.atanh(n), n), y)

    def expmap(self, base, v) -> Tensor:
        n = ad.norm(v, MIN_NORM)
        lam = self.conformal_factor(base)
        t = ad.tanh(ad.scale(ad.mul(lam, n), self.sqrt_c / 2.0))
        step = ad.mul(ad.div(t, ad.scale(n, self.sqrt_c)), v)
        return self.mobius_add(base, step)

    def logmap(self, base, y) -> Tensor:
        w = self.mobius_add(-base, y)
        n = ad.norm(w, MIN_NORM)
        lam = self.conformal_factor(base)
        coef = ad.div(ad.scale(ad.atanh(ad.scale(n, self.sqrt_c)), 2.0 / self.sqrt_c), ad.mul(lam, n))
        return ad.mul(coef, w)

    def inner_distance(self, u, v) -> Tensor:
        """Row-wise coefficient-free distance, shape ``(..., 1)``."""
        n = ad.norm(self.mobius_add(-u, v), MIN_NORM)
        return ad.scale(ad.atanh(ad.scale(n, self.sqrt_c)), 1.0 / self.sqrt_c)

    def distance(self, u, v) -> Tensor:
        """Row-wise geodesic distance, shape ``(..., 1)``."""
        return ad.scale(self.inner_distance(u, v), 2.0)

    def origin_distance_sq(self, u) -> Tensor:
        d = ad.scale(ad.atanh(ad.scale(ad.norm(u, MIN_NORM), self.sqrt_c)), 1.0 / self.sqrt_c)
        return ad.square(d)

    def pairwise_inner_distance_sq(self, U, V) -> Tensor:
        """``(a, b)`` squared inner distances between rows of U and V."""
        c = self.c
        a2 = ad.sum(ad.square(U), axis=-1, keepdims=True)             # (a, 1)
        v2 = ad.reshape(ad.sum(ad.square(V), axis=-1), (1, V.shape[0]))
        av = -ad.matmul(U, ad.swap_last(V))                            # <-u, v>
        A = 1.0 + ad.scale(av, 2 * c) + ad.scale(v2, c)
        B = 1.0 - ad.scale(a2, c)
        num = ad.mul(ad.square(A), a2) + ad.scale(ad.mul(ad.mul(A, B), av), 2.0) + ad.mul(ad.square(B), v2)
        den = 1.0 + ad.scale(av, 2 * c) + ad.scale(ad.mul(a2, v2), c * c)
        gyro = ad.minimum(ad.div(ad.sqrt(num, MIN_NORM**2), den), self.max_norm)
        return ad.square(ad.scale(ad.atanh(ad.scale(gyro, self.sqrt_c)), 1.0 / self.sqrt_c))

    def score(self, U, V) -> Tensor:
        """Matching scores between user rows ``U`` (a, d) and item rows ``V`` (b, d)."""
        if self.inner == "P":
            return ad.matmul(self.log0(U), ad.swap_last(self.log0(V)))
        du = self.origin_distance_sq(U)                                # (a, 1)
        dv = ad.reshape(self.origin_distance_sq(V), (1, V.shape[0]))
        return ad.scale(du + dv - self.pairwise_inner_distance_sq(U, V), 0.5)


class EuclideanSpace:
    name = "euclidean"

    def project(self, x):
        return x

    def mobius_add(self, u, v):
        return ad.add(u, v)

    def exp0(self, x):
        return ad.as_tensor(x)

    def log0(self, y):
        return ad.as_tensor(y)

    def expmap(self, base, v):
        return ad.add(base, v)

    def logmap(self, base, y):
        return ad.sub(y, base)

    def distance(self, u, v):
        return ad.norm(ad.sub(u, v), MIN_NORM)

    def score(self, U, V):
        return ad.matmul(U, ad.swap_last(V))


def make_space(variant: str, c: float = 1.0, inner: str = "D", boundary_eps: float = 1e-5):
    if variant == "poincare":
        return PoincareSpace(c, boundary_eps, inner)
    if variant == "euclidean":
        return EuclideanSpace()
    raise ValueError(f"unknown variant {variant!r}")
