"""Exact and stochastic first-order oracles.

Every noise draw is a pure function of ``(seed, player, t, k, i, tag)``: the
key feeds a counter-based Philox generator, so replications on parallel
workers never couple through draw order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ProtocolError

EXACT = "exact"
GAUSSIAN = "gaussian"
BALL = "ball"
_KINDS = (EXACT, GAUSSIAN, BALL)

_MASK64 = (1 << 64) - 1

# draw tags (4th Philox counter word)
TAG_NEW = 0  # step-2 sample of the newly revealed loss
TAG_INNER = 1  # inner-loop resampling of the whole window
TAG_REFILL = 2  # refill of a window estimate missing from the cache


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean additive gradient noise with ``E||noise||^2 <= sigma^2``.

    ``gaussian`` uses covariance ``sigma^2/n * I``; ``ball`` is uniform on the
    closed ball of radius ``sigma`` (so also ``||noise|| <= sigma`` surely).
    """

    kind: str = EXACT
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ParameterError(f"unknown noise kind {self.kind!r}")
        if not self.sigma >= 0:
            raise ParameterError(f"sigma must be >= 0, got {self.sigma}")
        if self.kind == EXACT and self.sigma != 0:
            object.__setattr__(self, "sigma", 0.0)

    @classmethod
    def exact(cls):
        return cls(EXACT, 0.0)

    @classmethod
    def gaussian(cls, sigma):
        return cls(GAUSSIAN, float(sigma))

    @classmethod
    def ball(cls, sigma):
        return cls(BALL, float(sigma))

    @property
    def bounded(self) -> bool:
        return self.kind in (EXACT, BALL)

    @property
    def silent(self) -> bool:
        return self.kind == EXACT or self.sigma == 0.0

    def sample(self, rng: np.random.Generator, n: int, size: int | None = None) -> np.ndarray:
        shape = (n,) if size is None else (size, n)
        if self.silent:
            return np.zeros(shape)
        if size is None and self.kind == BALL:
            z = rng.standard_normal(n)
            return z * (self.sigma * rng.random() ** (1.0 / n) / math.sqrt(z @ z))
        z = rng.standard_normal(shape)
        if self.kind == GAUSSIAN:
            return z * (self.sigma / math.sqrt(n))
        # uniform in the ball: gaussian direction, radius sigma * U^(1/n)
        norms = np.linalg.norm(z, axis=-1, keepdims=True)
        u = rng.random(shape[:-1] + (1,))
        out = z / norms * (self.sigma * u ** (1.0 / n))
        return out

    def to_dict(self):
        return {"kind": self.kind, "sigma": self.sigma}

    @classmethod
    def from_dict(cls, d):
        return cls(d.get("kind", EXACT), float(d.get("sigma", 0.0)))


def scaled_oracle(noise: NoiseModel, factor: float) -> NoiseModel:
    """Same law with ``sigma / factor`` (the algorithm queries the ``sigma/w`` oracle)."""
    if not factor > 0:
        raise ParameterError(f"scale factor must be positive, got {factor}")
    if noise.kind == EXACT:
        return noise
    return NoiseModel(noise.kind, noise.sigma / factor)


def keyed_rng(seed: int, player: int, t: int, k: int, i: int, tag: int) -> np.random.Generator:
    key = (int(seed) & _MASK64) | ((int(player) & _MASK64) << 64)
    # loss indices may be <= 0 (past the start of the horizon); shift into u64
    counter = [int(t) & _MASK64, int(k) & _MASK64, int(i) & _MASK64, int(tag) & _MASK64]
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


@dataclass
class GradientSample:
    vector: np.ndarray
    oracle_calls_consumed: int = 1


class StochasticOracle:
    """Realizes ``S_sigma(x; omega, f_i)`` for the losses of one stream.

    ``sample_grad`` enforces the window-reach contract ``t - w <= i <= t``
    relative to the round currently announced with :meth:`enter_round`.
    Not thread-safe: one instance per solver run.
    """

    def __init__(self, noise: NoiseModel, seed: int = 0, player: int = 0):
        self.noise = noise
        self.seed = int(seed)
        self.player = int(player)
        self.calls = 0
        self._round = 0
        self._w = 1
        # one generator re-keyed per draw; same streams as keyed_rng, without the construction cost
        self._bg = np.random.Philox(key=0)
        self._gen = np.random.Generator(self._bg)
        self._state = self._bg.state

    def _keyed(self, t, k, i, tag) -> np.random.Generator:
        st = self._state
        st["state"]["key"][:] = (self.seed & _MASK64, self.player & _MASK64)
        st["state"]["counter"][:] = (t & _MASK64, k & _MASK64, i & _MASK64, tag & _MASK64)
        st["buffer_pos"] = 4
        st["has_uint32"] = 0
        self._bg.state = st
        return self._gen

    def enter_round(self, t: int, w: int) -> None:
        if t < self._round:
            raise ProtocolError(f"rounds must be non-decreasing ({t} after {self._round})")
        self._round, self._w = int(t), int(w)

    def sample_grad(self, stream, i: int, x, k: int = 0, tag: int = TAG_INNER) -> GradientSample:
        t, w = self._round, self._w
        if not (t - w <= i <= t) or t < 1:
            raise ProtocolError(
                f"oracle query for loss {i} outside window reach [{t - w}, {t}] of round {t}")
        self.calls += 1
        x = np.asarray(x, dtype=float)
        if i <= 0:
            # f_i == 0 before the horizon starts: exact zero gradient
            return GradientSample(np.zeros_like(x))
        grad = stream.grad(i, x)
        if self.noise.silent:
            return GradientSample(np.array(grad, dtype=float, copy=True))
        rng = self._keyed(int(t), int(k), int(i), int(tag))
        return GradientSample(grad + self.noise.sample(rng, x.size))


def sample_grad(stream, t: int, x, noise: NoiseModel, rng: np.random.Generator) -> GradientSample:
    """Stateless variant: ``grad f_t(x)`` plus one draw from ``noise`` using ``rng``."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x) if t <= 0 else np.asarray(stream.grad(t, x), dtype=float)
    return GradientSample(g + noise.sample(rng, x.size))
