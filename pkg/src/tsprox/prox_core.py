"""Proximal operators, the prox-grad map and the prox residual.

Every regularizer exposes ``value`` (extended real, ``math.inf`` outside the
domain) and ``prox(x, eta)`` in closed form. Stationarity and all regret
measures in the package are built from :func:`prox_residual`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ParameterError, ShapeError

# Indicator membership tolerance.
DOMAIN_TOL = 1e-9


def _as_vector(x) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1:
        raise ShapeError(f"expected a 1-D vector, got shape {v.shape}")
    return v


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex.

    Sort-based threshold method: find the largest ``k`` such that the
    ``k``-th largest entry stays positive after subtracting the common shift.
    """
    v = _as_vector(v)
    if v.size == 0:
        raise ShapeError("cannot project an empty vector onto the simplex")
    if not np.all(np.isfinite(v)):
        raise ParameterError("simplex projection needs finite entries")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ks = np.arange(1, v.size + 1)
    k = ks[u - css / ks > 0][-1]
    theta = css[k - 1] / k
    z = np.maximum(v - theta, 0.0)
    # absorb the last few ulps so the block sums to one
    s = z.sum()
    if s != 1.0:
        z /= s
    return z


def soft_threshold(v, thresh):
    return np.sign(v) * np.maximum(np.abs(v) - thresh, 0.0)


class Regularizer:
    """Convex, proper, l.s.c. ``g >= 0`` with a closed-form prox."""

    kind = "abstract"

    def value(self, x) -> float:
        raise NotImplementedError

    def prox(self, x, eta: float) -> np.ndarray:
        raise NotImplementedError

    def contains(self, x) -> bool:
        return math.isfinite(self.value(x))

    def default_point(self, n: int) -> np.ndarray:
        """Origin pushed into the domain (simplex blocks get their barycenter)."""
        return self.prox(np.zeros(n), 1.0) if not self.contains(np.zeros(n)) else np.zeros(n)

    def to_dict(self) -> dict:
        raise NotImplementedError

    def check_dim(self, n: int) -> None:
        pass


@dataclass(frozen=True)
class Zero(Regularizer):
    kind = "zero"

    def value(self, x) -> float:
        return 0.0

    def prox(self, x, eta):
        return np.array(_as_vector(x), copy=True)

    def to_dict(self):
        return {"kind": self.kind}


@dataclass(frozen=True)
class L1(Regularizer):
    mu: float = 1.0
    kind = "l1"

    def __post_init__(self):
        if not self.mu >= 0:
            raise ParameterError(f"L1 weight must be >= 0, got {self.mu}")

    def value(self, x):
        return float(self.mu * np.abs(_as_vector(x)).sum())

    def prox(self, x, eta):
        return soft_threshold(_as_vector(x), eta * self.mu)

    def to_dict(self):
        return {"kind": self.kind, "mu": self.mu}


@dataclass(frozen=True, eq=False)
class BoxIndicator(Regularizer):
    lo: np.ndarray
    hi: np.ndarray
    kind = "box"

    def __post_init__(self):
        lo, hi = _as_vector(self.lo), _as_vector(self.hi)
        if lo.shape != hi.shape:
            raise ShapeError("box bounds must have the same length")
        if np.any(lo > hi):
            raise ParameterError("box needs lo <= hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def uniform(cls, n: int, lo: float = -1.0, hi: float = 1.0) -> "BoxIndicator":
        return cls(np.full(n, float(lo)), np.full(n, float(hi)))

    def check_dim(self, n):
        if self.lo.size != n:
            raise ShapeError(f"box has dimension {self.lo.size}, problem has {n}")

    def value(self, x):
        x = _as_vector(x)
        self.check_dim(x.size)
        # max of the violations is a single reduction; NaN propagates to inf
        worst = max(float((self.lo - x).max()), float((x - self.hi).max()))
        return 0.0 if worst <= DOMAIN_TOL else math.inf

    def prox(self, x, eta):
        x = _as_vector(x)
        self.check_dim(x.size)
        return np.minimum(np.maximum(x, self.lo), self.hi)

    def to_dict(self):
        return {"kind": self.kind, "lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass(frozen=True)
class SimplexIndicator(Regularizer):
    """Indicator of a product of simplices; each block is a ``(start, stop)`` range.

    Coordinates not covered by any block are unconstrained.
    """

    blocks: tuple = field(default_factory=tuple)
    kind = "simplex"

    def __post_init__(self):
        blocks = tuple((int(a), int(b)) for a, b in self.blocks)
        taken = set()
        for a, b in blocks:
            if not 0 <= a < b:
                raise ParameterError(f"bad simplex block ({a}, {b})")
            idx = set(range(a, b))
            if idx & taken:
                raise ParameterError("simplex blocks overlap")
            taken |= idx
        object.__setattr__(self, "blocks", blocks)

    def check_dim(self, n):
        if self.blocks and max(b for _, b in self.blocks) > n:
            raise ShapeError("simplex block exceeds the problem dimension")

    def _free_mask(self, n):
        mask = np.ones(n, dtype=bool)
        for a, b in self.blocks:
            mask[a:b] = False
        return mask

    def _in_blocks(self, x) -> bool:
        for a, b in self.blocks:
            xb = x[a:b]
            if np.any(xb < -DOMAIN_TOL) or abs(xb.sum() - 1.0) > DOMAIN_TOL * max(1, b - a):
                return False
        return True

    def value(self, x):
        x = _as_vector(x)
        self.check_dim(x.size)
        return 0.0 if self._in_blocks(x) else math.inf

    def prox(self, x, eta):
        x = _as_vector(x)
        self.check_dim(x.size)
        z = np.array(x, copy=True)
        for a, b in self.blocks:
            z[a:b] = project_simplex(x[a:b])
        return z

    def default_point(self, n):
        z = np.zeros(n)
        for a, b in self.blocks:
            z[a:b] = 1.0 / (b - a)
        return z

    def to_dict(self):
        return {"kind": self.kind, "blocks": [list(b) for b in self.blocks]}


@dataclass(frozen=True)
class SimplexPlusL1(SimplexIndicator):
    """``mu * ||x||_1`` plus the product-of-simplices indicator.

    On a simplex block the L1 term is the constant ``mu``, so the prox there is
    the plain projection; free coordinates are soft-thresholded.
    """

    mu: float = 0.0
    kind = "simplex_l1"

    def __post_init__(self):
        super().__post_init__()
        if not self.mu >= 0:
            raise ParameterError(f"L1 weight must be >= 0, got {self.mu}")

    def value(self, x):
        x = _as_vector(x)
        self.check_dim(x.size)
        if not self._in_blocks(x):
            return math.inf
        return float(self.mu * np.abs(x).sum())

    def prox(self, x, eta):
        z = super().prox(x, eta)
        free = self._free_mask(z.size)
        if free.any():
            z[free] = soft_threshold(z[free], eta * self.mu)
        return z

    def to_dict(self):
        return {"kind": self.kind, "blocks": [list(b) for b in self.blocks], "mu": self.mu}


def regularizer_from_dict(spec: dict, n: int | None = None) -> Regularizer:
    kind = spec.get("kind", "zero")
    if kind == "zero":
        return Zero()
    if kind == "l1":
        return L1(float(spec.get("mu", 1.0)))
    if kind == "box":
        lo, hi = spec.get("lo", -1.0), spec.get("hi", 1.0)
        if np.isscalar(lo) or np.isscalar(hi):
            if n is None:
                raise ParameterError("scalar box bounds need the problem dimension")
            return BoxIndicator(np.full(n, float(lo)) if np.isscalar(lo) else lo,
                                np.full(n, float(hi)) if np.isscalar(hi) else hi)
        return BoxIndicator(np.asarray(lo, float), np.asarray(hi, float))
    if kind == "simplex":
        return SimplexIndicator(tuple(map(tuple, spec["blocks"])))
    if kind == "simplex_l1":
        return SimplexPlusL1(tuple(map(tuple, spec["blocks"])), float(spec.get("mu", 0.0)))
    raise ParameterError(f"unknown regularizer kind {kind!r}")


def _check(x, d, eta):
    if not eta > 0:
        raise ParameterError(f"step size must be positive, got {eta}")
    x, d = _as_vector(x), _as_vector(d)
    if x.shape != d.shape:
        raise ShapeError(f"point has shape {x.shape}, direction has shape {d.shape}")
    if not np.all(np.isfinite(x)):
        raise ParameterError("point has non-finite entries")
    return x, d


def prox_grad_map(g: Regularizer, x, d, eta: float) -> np.ndarray:
    """``prox_{eta g}(x - eta d)``: the regularized gradient step along ``d``."""
    x, d = _check(x, d, eta)
    return g.prox(x - eta * d, eta)


def prox_residual(g: Regularizer, x, d, eta: float) -> np.ndarray:
    x, d = _check(x, d, eta)
    return (x - g.prox(x - eta * d, eta)) / eta


def residual_norm_sq(g: Regularizer, x, d, eta: float) -> float:
    r = prox_residual(g, x, d, eta)
    return float(r @ r)


def residual_norm(g: Regularizer, x, d, eta: float) -> float:
    return math.sqrt(residual_norm_sq(g, x, d, eta))


def all_kinds_sample(n: int, rng: np.random.Generator) -> Sequence[Regularizer]:
    """One randomly parameterised instance of every regularizer kind, dimension ``n``."""
    lo = -rng.uniform(0.1, 2.0, n)
    hi = rng.uniform(0.1, 2.0, n)
    cut = int(rng.integers(1, n)) if n > 1 else 1
    blocks = ((0, cut), (cut, n)) if cut < n else ((0, n),)
    return (
        Zero(),
        L1(float(rng.uniform(0, 2))),
        BoxIndicator(lo, hi),
        SimplexIndicator(blocks),
        SimplexPlusL1(blocks, float(rng.uniform(0, 2))),
    )
