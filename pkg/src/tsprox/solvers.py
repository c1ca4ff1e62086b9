"""Time-smoothed online prox-grad descent, deterministic and stochastic.

Both solvers are written as a per-round stepper (``alg1_round`` /
``alg2_round``) plus a driver that loops over the horizon; the games module
drives the same steppers in lock-step for several players.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import CappedRunError, ConfigError, InvariantError, ParameterError, ShapeError
from .oracles import (NoiseModel, StochasticOracle, TAG_INNER, TAG_NEW, TAG_REFILL,
                      scaled_oracle)
from .prox_core import Regularizer
from .streams import LossStream, RevealGuard

DECREASE_SLACK = 1e-9


@dataclass
class StepConfig:
    eta: float
    L: float
    w: int
    delta: float
    T: int
    sigma: float = 0.0
    max_inner: int | None = None

    def validate(self) -> "StepConfig":
        if not self.L > 0:
            raise ConfigError(f"smoothness constant must be positive, got L={self.L}")
        if not 0 < self.eta < 1.0 / self.L:
            raise ConfigError(f"step size must satisfy 0 < eta < 1/L = {1.0 / self.L:.6g}, got {self.eta}")
        if not self.delta > 0:
            raise ConfigError(f"delta must be positive, got {self.delta}")
        if not 1 <= self.w <= self.T:
            raise ConfigError(f"window must satisfy 1 <= w <= T, got w={self.w}, T={self.T}")
        if self.max_inner is not None and self.max_inner < 1:
            raise ConfigError("max_inner must be a positive integer")
        return self

    def to_dict(self):
        return asdict(self)


def min_delta_alg2(eta: float, L: float, sigma: float, iteration_bounds: bool = False) -> float:
    """Infimum of admissible ``delta`` for the stochastic method (strict inequality)."""
    d2 = 2 * sigma ** 2 / (eta * (1 - eta * L))
    if iteration_bounds:
        d2 = max(d2, sigma ** 2 / (eta * (1 - eta * (L + 1))))
    return math.sqrt(d2)


def validate_config_alg2(cfg: StepConfig, noise: NoiseModel, iteration_bounds: bool = False) -> StepConfig:
    """Check the a.s.-finiteness condition and, optionally, the iteration-bound conditions.

    ``iteration_bounds`` additionally requires ``eta < 1/(L+1)`` and
    ``delta^2 > sigma^2 / (eta (1 - eta (L+1)))``.
    """
    cfg.validate()
    sigma = noise.sigma
    eta, L, delta = cfg.eta, cfg.L, cfg.delta
    rhs = 2 * sigma ** 2 / (eta * (1 - eta * L))
    if not delta ** 2 > rhs:
        raise ConfigError(
            f"delta^2 > 2 sigma^2 / (eta (1 - eta L)) violated: {delta ** 2:.6g} <= {rhs:.6g}; "
            f"need delta > {math.sqrt(rhs):.6g}")
    if iteration_bounds:
        if not noise.bounded:
            raise ConfigError("iteration bounds need a norm-bounded noise model (exact or ball)")
        if not eta < 1.0 / (L + 1):
            raise ConfigError(f"eta < 1/(L+1) = {1.0 / (L + 1):.6g} violated: eta = {eta}")
        rhs2 = sigma ** 2 / (eta * (1 - eta * (L + 1)))
        if not delta ** 2 > rhs2:
            raise ConfigError(
                f"delta^2 > sigma^2 / (eta (1 - eta (L+1))) violated: {delta ** 2:.6g} <= {rhs2:.6g}; "
                f"need delta > {math.sqrt(rhs2):.6g}")
    return cfg


@dataclass
class SolverTrace:
    """Per-round record of a run. Row ``t-1`` of ``x`` is ``x_t``; the last row is ``x_{T+1}``."""

    solver: str
    x: np.ndarray
    tau: np.ndarray
    residual_at_exit: np.ndarray
    oracle_calls: np.ndarray
    decreases: list = field(default_factory=list)
    exited_by_test: np.ndarray | None = None
    sfo_calls: int = 0
    rounds: int = 0

    @property
    def tau_total(self) -> int:
        return int(self.tau[: self.rounds].sum())

    @property
    def iterates(self) -> np.ndarray:
        return self.x[: self.rounds]

    @classmethod
    def empty(cls, solver, T, n):
        return cls(solver, np.full((T + 1, n), np.nan), np.zeros(T, dtype=np.int64),
                   np.full(T, np.nan), np.zeros(T, dtype=np.int64), [],
                   np.zeros(T, dtype=bool), 0, 0)

    def record(self, t, tau_t, residual, calls, decreases=(), by_test=True):
        self.tau[t - 1] = tau_t
        self.residual_at_exit[t - 1] = residual
        self.oracle_calls[t - 1] = calls
        self.decreases.append(list(decreases))
        self.exited_by_test[t - 1] = by_test
        self.rounds = t


class SufficientDecreaseCheck:
    """Asserts, per inner step of the deterministic method, that the smoothed composite
    objective drops by at least ``(eta - eta^2 L / 2) delta^2 / w^2`` (minus ``slack``)."""

    def __init__(self, cfg: StepConfig, slack: float = DECREASE_SLACK, raise_on_violation: bool = True):
        self.required = (cfg.eta - cfg.eta ** 2 * cfg.L / 2) * cfg.delta ** 2 / cfg.w ** 2
        self.slack = slack
        self.raise_on_violation = raise_on_violation
        self.checked = 0
        self.violations: list[tuple[int, int, float]] = []

    def __call__(self, t: int, k: int, decrease: float) -> None:
        self.checked += 1
        if decrease < self.required - self.slack:
            self.violations.append((t, k, decrease))
            if self.raise_on_violation:
                raise InvariantError(
                    f"round {t}, inner step {k}: decrease {decrease:.6g} < required {self.required:.6g}")


def inner_sufficient_decrease_check(cfg: StepConfig, **kw) -> SufficientDecreaseCheck:
    return SufficientDecreaseCheck(cfg, **kw)


def bound_queries_det(w, g_x1, M, eta, L, delta):
    return 2 * w ** 2 * (g_x1 + 2 * M) / ((2 - eta * L) * eta * delta ** 2)


def bound_queries_stoch(w, g_x1, M, eta, L, delta, sigma):
    den = (1 - eta * (L + 1)) * eta * delta ** 2 - sigma ** 2
    if den <= 0:
        return math.inf
    return 2 * w ** 2 * (g_x1 + 2 * M) / den


def default_cap(cfg: StepConfig, g_x1: float, M: float, noise: NoiseModel | None = None) -> int:
    """Ten times the applicable query bound, at least 10^4."""
    if cfg.max_inner is not None:
        return int(cfg.max_inner)
    b = math.inf
    if noise is not None and not noise.silent and noise.bounded and cfg.eta < 1 / (cfg.L + 1):
        b = bound_queries_stoch(cfg.w, g_x1, M, cfg.eta, cfg.L, cfg.delta, noise.sigma)
    if not math.isfinite(b):
        b = bound_queries_det(cfg.w, g_x1, M, cfg.eta, cfg.L, cfg.delta)
    return max(10_000, int(math.ceil(10 * b)))


def _initial_point(g: Regularizer, n: int, x1) -> np.ndarray:
    if x1 is None:
        return np.asarray(g.default_point(n), dtype=float)
    x1 = np.array(x1, dtype=float, copy=True)
    if x1.shape != (n,):
        raise ShapeError(f"x1 has shape {x1.shape}, expected ({n},)")
    if not g.contains(x1):
        raise ParameterError("x1 must lie in dom g")
    return x1


# ---------------------------------------------------------------------------
# deterministic method (alg1)


def alg1_round(stream, g: Regularizer, cfg: StepConfig, t: int, x: np.ndarray, cap: int,
               hook=None):
    """One round of the deterministic method. Returns ``(x_next, tau_t, residual, decreases)``.

    Raises :class:`CappedRunError` (without a trace) when ``cap`` inner steps do not suffice.
    """
    eta, w = cfg.eta, cfg.w
    thr = cfg.delta / w
    y = x
    d = stream.avg_grad(t, w, y)
    h_y = None
    decreases = []
    k = 0
    while True:
        p = g.prox(y - eta * d, eta)
        res = math.sqrt(float((y - p) @ (y - p))) / eta
        if not math.isfinite(res):
            raise InvariantError(f"round {t}, inner step {k}: non-finite iterate "
                                 "(objective unbounded below?)")
        if not res > thr:
            break
        if k >= cap:
            raise CappedRunError(f"round {t}: inner loop exceeded {cap} steps", round_index=t)
        y_prev, y = y, p
        if hook is not None:
            if h_y is None:
                h_y = stream.avg_value(t, w, y_prev) + g.value(y_prev)
            f_p, d = stream.avg_value_grad(t, w, y)
            h_p = f_p + g.value(y)
            decreases.append(h_y - h_p)
            hook(t, k, h_y - h_p)
            h_y = h_p
        else:
            d = stream.avg_grad(t, w, y)
        k += 1
    return y, k, res, decreases


def run_alg1(stream: LossStream, g: Regularizer, cfg: StepConfig, x1=None,
             check_decrease: bool = True, hook=None) -> SolverTrace:
    """Time-smoothed online prox-grad descent with exact gradients.

    With ``check_decrease`` every inner step is checked against the
    sufficient-decrease inequality (raises :class:`InvariantError`).
    """
    cfg.validate()
    if cfg.T != stream.T:
        raise ConfigError(f"config horizon {cfg.T} differs from stream horizon {stream.T}")
    g.check_dim(stream.n)
    x = _initial_point(g, stream.n, x1)
    cap = default_cap(cfg, g.value(x), stream.M)
    if hook is None and check_decrease:
        hook = SufficientDecreaseCheck(cfg)
    guard = RevealGuard(stream)
    trace = SolverTrace.empty("alg1", cfg.T, stream.n)
    for t in range(1, cfg.T + 1):
        guard.announce(t)
        trace.x[t - 1] = x
        try:
            x, tau_t, res, dec = alg1_round(guard, g, cfg, t, x, cap, hook)
        except CappedRunError as err:
            err.trace = trace
            raise
        trace.record(t, tau_t, res, tau_t + 1, dec)
    trace.x[cfg.T] = x
    trace.sfo_calls = int(trace.oracle_calls.sum())
    return trace


# ---------------------------------------------------------------------------
# stochastic method (alg2)


class WindowState:
    """Per-loss stochastic gradient estimates at the current anchor point and their mean."""

    def __init__(self, w: int, anchor: np.ndarray):
        self.w = w
        self.anchor = np.array(anchor, copy=True)
        self.estimates: dict[int, np.ndarray] = {}
        self.aggregate = np.zeros_like(self.anchor)

    def lookup(self, i: int, x: np.ndarray):
        if i <= 0:
            return np.zeros_like(x)
        if not np.array_equal(self.anchor, x):
            return None
        return self.estimates.get(i)

    def slide(self, t: int, new: np.ndarray, old: np.ndarray) -> np.ndarray:
        """Incremental window update for round ``t``; returns the new aggregate."""
        self.aggregate = self.aggregate + (new - old) / self.w
        self.estimates.pop(t - self.w, None)
        self.estimates[t] = new
        return self.aggregate

    def reset(self, anchor: np.ndarray, estimates: dict, aggregate: np.ndarray) -> None:
        self.anchor = anchor
        self.estimates = estimates
        self.aggregate = aggregate

    def buffered_mean(self, t: int) -> np.ndarray:
        acc = np.zeros_like(self.anchor)
        for i in range(t - self.w + 1, t + 1):
            if i >= 1:
                acc = acc + self.estimates[i]
        return acc / self.w


def alg2_round(stream, g: Regularizer, cfg: StepConfig, t: int, x: np.ndarray,
               oracle: StochasticOracle, window: WindowState, cap: int):
    """One round of the stochastic method.

    Returns ``(x_next, tau_t, residual, sfo_calls_t)`` and leaves ``window``
    anchored at ``x_next`` carrying the surrogate gradient used by the exit test.
    """
    eta, w = cfg.eta, cfg.w
    thr = cfg.delta / w
    calls0 = oracle.calls
    oracle.enter_round(t, w)
    new = oracle.sample_grad(stream, t, x, k=0, tag=TAG_NEW).vector
    old = window.lookup(t - w, x)
    if old is None:
        old = oracle.sample_grad(stream, t - w, x, k=0, tag=TAG_REFILL).vector
    G = window.slide(t, new, old)
    y = x
    k = 0
    while True:
        p = g.prox(y - eta * G, eta)
        res = math.sqrt(float((y - p) @ (y - p))) / eta
        if not math.isfinite(res):
            raise InvariantError(f"round {t}, inner step {k}: non-finite iterate "
                                 "(objective unbounded below?)")
        if not res > thr:
            break
        if k >= cap:
            raise CappedRunError(f"round {t}: inner loop exceeded {cap} steps", round_index=t)
        y = p
        k += 1
        est = {}
        acc = np.zeros_like(y)
        for i in range(t - w + 1, t + 1):
            v = oracle.sample_grad(stream, i, y, k=k, tag=TAG_INNER).vector
            if i >= 1:
                est[i] = v
            acc = acc + v
        G = acc / w
        window.reset(y, est, G)
    return y, k, res, oracle.calls - calls0


def run_alg2(stream: LossStream, g: Regularizer, cfg: StepConfig, noise: NoiseModel, x1=None,
             seed: int = 0, iteration_bounds: bool = False, player: int = 0) -> SolverTrace:
    """Time-smoothed online stochastic prox-grad method.

    ``noise`` is the ``sigma`` oracle of the analysis; queries go to the
    ``sigma / w`` oracle as the method prescribes.
    """
    validate_config_alg2(cfg, noise, iteration_bounds)
    if cfg.T != stream.T:
        raise ConfigError(f"config horizon {cfg.T} differs from stream horizon {stream.T}")
    g.check_dim(stream.n)
    x = _initial_point(g, stream.n, x1)
    cap = default_cap(cfg, g.value(x), stream.M, noise)
    oracle = StochasticOracle(scaled_oracle(noise, cfg.w), seed=seed, player=player)
    window = WindowState(cfg.w, x)
    guard = RevealGuard(stream)
    trace = SolverTrace.empty("alg2", cfg.T, stream.n)
    for t in range(1, cfg.T + 1):
        guard.announce(t)
        trace.x[t - 1] = x
        try:
            x, tau_t, res, calls = alg2_round(guard, g, cfg, t, x, oracle, window, cap)
        except CappedRunError as err:
            trace.sfo_calls = oracle.calls
            err.trace = trace
            raise
        trace.record(t, tau_t, res, calls)
    trace.x[cfg.T] = x
    trace.sfo_calls = oracle.calls
    return trace
