"""Online loss sequences ``f_1, ..., f_T`` and window arithmetic over them.

Indices ``t <= 0`` denote the zero function. Concrete streams implement
``_value`` / ``_grad`` for ``1 <= t <= T``; the public ``value`` / ``grad``
apply the convention and the horizon check.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ParameterError, ProtocolError, RangeError, ShapeError
from .oracles import NoiseModel


class LossStream:
    n: int
    T: int
    L: float
    M: float
    descriptor: str = "stream"

    def _value(self, t: int, x: np.ndarray) -> float:
        raise NotImplementedError

    def _grad(self, t: int, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check_t(self, t):
        if t > self.T:
            raise RangeError(f"round {t} is beyond the horizon T={self.T}")

    def value(self, t: int, x) -> float:
        if t <= 0:
            return 0.0
        self._check_t(t)
        return float(self._value(t, np.asarray(x, dtype=float)))

    def grad(self, t: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if t <= 0:
            return np.zeros_like(x)
        self._check_t(t)
        return self._grad(t, x)

    def avg_grad(self, t: int, w: int, x) -> np.ndarray:
        """Gradient of the sliding average ``(1/w) sum_{i=t-w+1}^t f_i`` at ``x``."""
        x = np.asarray(x, dtype=float)
        acc = np.zeros_like(x)
        for i in range(max(1, t - w + 1), t + 1):
            acc += self.grad(i, x)
        return acc / w

    def avg_value(self, t: int, w: int, x) -> float:
        return sum(self.value(i, x) for i in range(max(1, t - w + 1), t + 1)) / w

    def avg_value_grad(self, t: int, w: int, x):
        return self.avg_value(t, w, x), self.avg_grad(t, w, x)

    def to_dict(self) -> dict:
        raise NotImplementedError(f"{type(self).__name__} has no serializable descriptor")


class RevealGuard:
    """Wraps a stream so that ``f_i`` is queryable only once round ``i`` was announced."""

    def __init__(self, stream: LossStream):
        self.stream = stream
        self.round = 0
        for attr in ("n", "T", "L", "M", "descriptor"):
            setattr(self, attr, getattr(stream, attr))

    def announce(self, t: int) -> None:
        if t != self.round + 1:
            raise ProtocolError(f"round {t} announced after round {self.round}")
        self.round = t

    def _guard(self, t):
        if t > self.round:
            raise ProtocolError(f"loss {t} queried before it was revealed (round {self.round})")

    def value(self, t, x):
        self._guard(t)
        return self.stream.value(t, x)

    def grad(self, t, x):
        self._guard(t)
        return self.stream.grad(t, x)

    def avg_grad(self, t, w, x):
        self._guard(t)
        return self.stream.avg_grad(t, w, x)

    def avg_value(self, t, w, x):
        self._guard(t)
        return self.stream.avg_value(t, w, x)

    def avg_value_grad(self, t, w, x):
        self._guard(t)
        return self.stream.avg_value_grad(t, w, x)


def sliding_average_grad(stream: LossStream, t: int, w: int, x) -> np.ndarray:
    if w < 1:
        raise ParameterError(f"window must be >= 1, got {w}")
    if not 1 <= t <= stream.T:
        raise RangeError(f"round {t} outside [1, {stream.T}]")
    return stream.avg_grad(t, w, x)


def sliding_average_value(stream: LossStream, t: int, w: int, x) -> float:
    if w < 1:
        raise ParameterError(f"window must be >= 1, got {w}")
    if not 1 <= t <= stream.T:
        raise RangeError(f"round {t} outside [1, {stream.T}]")
    return stream.avg_value(t, w, x)


def _trace_points(trace) -> np.ndarray:
    return np.asarray(getattr(trace, "x", trace), dtype=float)


def variation_terms(trace, stream: LossStream, w: int) -> np.ndarray:
    """Per-round ``||grad f_t(x_t) - grad f_{t-w}(x_t)||^2`` along the iterates."""
    xs = _trace_points(trace)
    T = stream.T
    if xs.shape[0] < T:
        raise RangeError(f"trace has {xs.shape[0]} iterates, stream horizon is {T}")
    out = np.empty(T)
    for t in range(1, T + 1):
        x = xs[t - 1]
        d = stream.grad(t, x) - stream.grad(t - w, x)
        out[t - 1] = d @ d
    return out


def trajectory_variation(trace, stream: LossStream, w: int) -> float:
    """Sliding-window variation evaluated at the realized iterates.

    ``trace`` is a :class:`~tsprox.solvers.SolverTrace` or an array whose
    row ``t-1`` is ``x_t``.
    """
    return float(variation_terms(trace, stream, w).sum())


def variation_sup_estimate(stream: LossStream, w: int, points) -> float:
    """Lower estimate of the sup-over-domain variation from sample points."""
    best = 0.0
    for x in np.atleast_2d(points):
        s = 0.0
        for t in range(1, stream.T + 1):
            d = stream.grad(t, x) - stream.grad(t - w, x)
            s += d @ d
        best = max(best, s)
    return best


# ---------------------------------------------------------------------------
# built-in streams


class LinearStream(LossStream):
    """``f_t(x) = <c_t, x>`` with gradients independent of ``x``."""

    def __init__(self, coeffs, radius: float = 1.0, descriptor: str = "linear"):
        c = np.asarray(coeffs, dtype=float)
        if c.ndim == 1:
            c = c[:, None]
        self.c = c
        self.T, self.n = c.shape
        self.radius = float(radius)
        self.L = 1.0
        self.M = float(np.abs(c).sum(axis=1).max() * self.radius) if c.size else 0.0
        self.descriptor = descriptor

    def _value(self, t, x):
        return float(self.c[t - 1] @ x)

    def _grad(self, t, x):
        return np.array(self.c[t - 1], copy=True)

    def avg_grad(self, t, w, x):
        x = np.asarray(x, dtype=float)
        if t <= 0:
            return np.zeros_like(x)
        self._check_t(t)
        if not hasattr(self, "_cum"):
            self._cum = np.vstack([np.zeros(self.n), np.cumsum(self.c, axis=0)])
        return (self._cum[t] - self._cum[max(0, t - w)]) / w

    def avg_value(self, t, w, x):
        return float(self.avg_grad(t, w, x) @ np.asarray(x, dtype=float))

    def to_dict(self):
        return {"kind": "linear", "coeffs": self.c.tolist(), "radius": self.radius}


class SignFlipStream(LinearStream):
    """Scalar ``f_t(x) = s_t x`` with i.i.d. fair signs; pair with the box ``[-1, 1]``.

    The true smoothness constant is 0; ``L = 1`` is stored so that step sizes
    in ``(0, 1/L)`` stay meaningful.
    """

    def __init__(self, T: int, seed: int):
        if T < 1:
            raise ParameterError("sign-flip stream needs T >= 1")
        rng = np.random.default_rng(seed)
        self.signs = rng.choice(np.array([-1.0, 1.0]), size=T)
        super().__init__(self.signs[:, None], radius=1.0, descriptor=f"sign_flip(T={T}, seed={seed})")
        self.seed = int(seed)
        self.L = 1.0
        self.M = 1.0

    def to_dict(self):
        return {"kind": "sign_flip", "T": self.T, "seed": self.seed}


def make_sign_flip_stream(T: int, seed: int) -> SignFlipStream:
    return SignFlipStream(T, seed)


class QuadraticDriftStream(LossStream):
    """``f_t(x) = 1/2 x'A_t x + b_t'x`` on the box ``[-radius, radius]^n``.

    ``A_t = A0 + amplitude * sin(2 pi t / period) * A1`` and
    ``b_t = b0 + amplitude * cos(2 pi t / period) * b1``, with ``A0`` indefinite
    and all base matrices drawn once from ``seed``. ``period = inf`` gives an
    offline stream.
    """

    def __init__(self, n: int, T: int, drift_period: float = 50.0, seed: int = 0,
                 amplitude: float = 0.5, radius: float = 1.0, neg_frac: float = 0.3):
        if n < 1 or T < 1:
            raise ParameterError("quadratic drift stream needs n >= 1 and T >= 1")
        self.n, self.T = int(n), int(T)
        self.drift_period = float(drift_period)
        self.seed = int(seed)
        self.amplitude = float(amplitude)
        self.radius = float(radius)
        self.neg_frac = float(neg_frac)
        rng = np.random.default_rng(seed)
        q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        n_neg = int(round(neg_frac * n))
        eig = np.concatenate([-rng.uniform(0.2, 1.0, n_neg), rng.uniform(0.5, 2.0, n - n_neg)])
        self.A0 = (q * eig) @ q.T
        B = rng.standard_normal((n, n)) / math.sqrt(n)
        self.A1 = 0.5 * (B + B.T)
        self.b0 = rng.standard_normal(n) * 0.5
        self.b1 = rng.standard_normal(n) * 0.5
        ts = np.arange(1, T + 1)
        if math.isinf(self.drift_period):
            s = np.zeros(T)
            c = np.zeros(T)
        else:
            s = np.sin(2 * np.pi * ts / self.drift_period)
            c = np.cos(2 * np.pi * ts / self.drift_period)
        self._s, self._c = s, c
        self.A = self.A0[None] + self.amplitude * s[:, None, None] * self.A1[None]
        self.b = self.b0[None] + self.amplitude * c[:, None] * self.b1[None]
        norms = np.abs(np.linalg.eigvalsh(self.A)).max(axis=1)
        self.L = float(norms.max())
        # |f| <= 1/2 ||A|| ||x||^2 + ||b||_1 r on the box
        self.M = float(np.max(0.5 * norms * n * self.radius ** 2
                              + self.radius * np.abs(self.b).sum(axis=1)))
        self._cA = np.concatenate([np.zeros((1, n, n)), np.cumsum(self.A, axis=0)])
        self._cb = np.concatenate([np.zeros((1, n)), np.cumsum(self.b, axis=0)])
        self.descriptor = f"quadratic_drift(n={n}, T={T}, period={drift_period}, seed={seed})"

    def _value(self, t, x):
        return 0.5 * x @ self.A[t - 1] @ x + self.b[t - 1] @ x

    def _grad(self, t, x):
        return self.A[t - 1] @ x + self.b[t - 1]

    def window_matrices(self, t, w):
        # one-entry cache: the inner loop of a round reuses the same window
        key = (t, w)
        if getattr(self, "_wkey", None) != key:
            lo = max(0, t - w)
            self._wval = ((self._cA[t] - self._cA[lo]) / w, (self._cb[t] - self._cb[lo]) / w)
            self._wkey = key
        return self._wval

    def avg_grad(self, t, w, x):
        if t > self.T:
            raise RangeError(f"round {t} is beyond the horizon T={self.T}")
        if t <= 0:
            return np.zeros(self.n)
        A, b = self.window_matrices(t, w)
        return A @ np.asarray(x, dtype=float) + b

    def avg_value(self, t, w, x):
        if t > self.T:
            raise RangeError(f"round {t} is beyond the horizon T={self.T}")
        if t <= 0:
            return 0.0
        x = np.asarray(x, dtype=float)
        A, b = self.window_matrices(t, w)
        return float(0.5 * x @ A @ x + b @ x)

    def avg_value_grad(self, t, w, x):
        if t > self.T:
            raise RangeError(f"round {t} is beyond the horizon T={self.T}")
        x = np.asarray(x, dtype=float)
        if t <= 0:
            return 0.0, np.zeros(self.n)
        A, b = self.window_matrices(t, w)
        Ax = A @ x
        return float(0.5 * x @ Ax + b @ x), Ax + b

    def to_dict(self):
        return {"kind": "quadratic_drift", "n": self.n, "T": self.T,
                "drift_period": self.drift_period if math.isfinite(self.drift_period) else "inf",
                "seed": self.seed, "amplitude": self.amplitude, "radius": self.radius,
                "neg_frac": self.neg_frac}


def make_quadratic_drift_stream(n: int, T: int, drift_period: float = 50.0, seed: int = 0,
                                **kw) -> QuadraticDriftStream:
    return QuadraticDriftStream(n, T, drift_period, seed, **kw)


@dataclass
class SmoothFunction:
    """A fixed smooth function with known constants over the intended domain."""

    n: int
    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    L: float
    M: float
    name: str = "f"


def quadratic_function(A, b, radius: float = 1.0, name: str = "quadratic") -> SmoothFunction:
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = b.size
    L = float(np.abs(np.linalg.eigvalsh(0.5 * (A + A.T))).max()) or 1.0
    M = 0.5 * L * n * radius ** 2 + radius * np.abs(b).sum()
    return SmoothFunction(n, lambda x: float(0.5 * x @ A @ x + b @ x), lambda x: A @ x + b,
                          L, float(M), name)


class OfflineStream(LossStream):
    """``f_t == f`` for every round."""

    def __init__(self, f: SmoothFunction, T: int, spec: dict | None = None):
        self.f, self.n, self.T = f, f.n, int(T)
        self.L, self.M = f.L, f.M
        self.descriptor = f"offline({f.name}, T={T})"
        self._spec = spec

    def _value(self, t, x):
        return self.f.value(x)

    def _grad(self, t, x):
        return np.asarray(self.f.grad(x), dtype=float)

    def to_dict(self):
        if self._spec is None:
            return super().to_dict()
        return dict(self._spec, T=self.T)


class StationaryStochasticStream(LossStream):
    """``f_t(x) = f(x) + <xi_t, x>`` with i.i.d. zero-mean ``xi_t``, so ``E f_t = f``.

    Each realization is drawn once (keyed by ``(seed, t)``) and memoized.
    """

    def __init__(self, f: SmoothFunction, noise: NoiseModel, T: int, seed: int = 0,
                 radius: float = 1.0, spec: dict | None = None):
        if noise.kind == "gaussian":
            # unbounded law: M is a 6-sigma envelope, not a hard bound
            xi_max = 6.0 * noise.sigma
        else:
            xi_max = noise.sigma
        self.f, self.noise, self.n, self.T = f, noise, f.n, int(T)
        self.seed = int(seed)
        self.L = f.L
        self.M = f.M + xi_max * radius * math.sqrt(f.n)
        self._xi: dict[int, np.ndarray] = {}
        self._lock = threading.Lock()
        self.descriptor = f"stationary({f.name}, {noise.kind}:{noise.sigma}, T={T}, seed={seed})"
        self._spec = spec

    def realization(self, t: int) -> np.ndarray:
        with self._lock:
            xi = self._xi.get(t)
            if xi is None:
                rng = np.random.default_rng([self.seed, t])
                xi = self.noise.sample(rng, self.n)
                self._xi[t] = xi
            return xi

    def _value(self, t, x):
        return self.f.value(x) + float(self.realization(t) @ x)

    def _grad(self, t, x):
        return np.asarray(self.f.grad(x), dtype=float) + self.realization(t)

    def to_dict(self):
        if self._spec is None:
            return super().to_dict()
        return dict(self._spec, T=self.T, seed=self.seed, noise=self.noise.to_dict())


def make_stationary_stochastic_stream(f: SmoothFunction, noise: NoiseModel, T: int,
                                      seed: int = 0, **kw) -> StationaryStochasticStream:
    if noise.kind not in ("exact", "gaussian", "ball"):
        raise ParameterError("noise law must be zero-mean")
    return StationaryStochasticStream(f, noise, T, seed, **kw)


def estimate_constants(stream: LossStream, sampler: Callable[[np.random.Generator, int], np.ndarray],
                       n_pairs: int = 100_000, seed: int = 0, inflate: float = 1.1,
                       local_scale: float = 1e-3):
    """Sampled ``(L, M)`` for a stream over the support of ``sampler``, inflated by ``inflate``.

    Half the pairs are global, half are short perturbations that probe local
    curvature. Callers needing exact constants should compute them analytically.
    """
    rng = np.random.default_rng(seed)
    n = stream.n
    L = 0.0
    M = 0.0
    batch = 2000
    done = 0
    while done < n_pairs:
        m = min(batch, n_pairs - done)
        xs = sampler(rng, m)
        ys = sampler(rng, m)
        half = m // 2
        ys[:half] = xs[:half] + local_scale * (ys[:half] - xs[:half])
        ts = rng.integers(1, stream.T + 1, size=m)
        for x, y, t in zip(xs, ys, ts):
            d = np.linalg.norm(x - y)
            if d > 0:
                L = max(L, np.linalg.norm(stream.grad(t, x) - stream.grad(t, y)) / d)
            M = max(M, abs(stream.value(t, x)))
        done += m
    return inflate * L, inflate * M


def check_smoothness(stream: LossStream, points, pairs: int = 1000, seed: int = 0,
                     factor: float = 1.0001) -> float:
    """Largest ``||grad(t,x)-grad(t,y)|| / (L ||x-y||)`` over random pairs; <= ``factor`` passes."""
    rng = np.random.default_rng(seed)
    pts = np.atleast_2d(points)
    if pts.shape[1] != stream.n:
        raise ShapeError("sample points have the wrong dimension")
    worst = 0.0
    for _ in range(pairs):
        i, j = rng.integers(0, len(pts), 2)
        t = int(rng.integers(1, stream.T + 1))
        x, y = pts[i], pts[j]
        d = np.linalg.norm(x - y)
        if d == 0:
            continue
        worst = max(worst, np.linalg.norm(stream.grad(t, x) - stream.grad(t, y)) / (stream.L * d))
    return worst


def stream_from_dict(spec: dict) -> LossStream:
    kind = spec["kind"]
    if kind == "quadratic_drift":
        period = spec.get("drift_period", 50.0)
        period = math.inf if period in ("inf", None) else float(period)
        return QuadraticDriftStream(int(spec["n"]), int(spec["T"]), period, int(spec.get("seed", 0)),
                                    amplitude=float(spec.get("amplitude", 0.5)),
                                    radius=float(spec.get("radius", 1.0)),
                                    neg_frac=float(spec.get("neg_frac", 0.3)))
    if kind == "sign_flip":
        return SignFlipStream(int(spec["T"]), int(spec["seed"]))
    if kind == "linear":
        return LinearStream(spec["coeffs"], float(spec.get("radius", 1.0)))
    if kind in ("offline_quadratic", "stationary_quadratic"):
        base = QuadraticDriftStream(int(spec["n"]), 1, math.inf, int(spec.get("base_seed", 0)),
                                    radius=float(spec.get("radius", 1.0)),
                                    neg_frac=float(spec.get("neg_frac", 0.3)))
        f = quadratic_function(base.A0, base.b0, base.radius, name=f"quad{spec.get('base_seed', 0)}")
        f.L, f.M = base.L, base.M
        if kind == "offline_quadratic":
            return OfflineStream(f, int(spec["T"]), spec=spec)
        noise = NoiseModel.from_dict(spec.get("noise", {}))
        return StationaryStochasticStream(f, noise, int(spec["T"]), int(spec.get("seed", 0)),
                                          radius=base.radius, spec=spec)
    if kind == "ontap":
        from .ontap import ontap_from_dict
        return ontap_from_dict(spec)[0]
    raise ParameterError(f"unknown stream kind {kind!r}")


def offline_quadratic_stream(n: int, T: int, base_seed: int = 0, radius: float = 1.0) -> OfflineStream:
    return stream_from_dict({"kind": "offline_quadratic", "n": n, "T": T, "base_seed": base_seed,
                             "radius": radius})
