"""Regret measures, bound evaluators and run reports."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError, ParameterError, RangeError
from .oracles import NoiseModel
from .prox_core import Regularizer, residual_norm_sq
from .solvers import (SolverTrace, StepConfig, bound_queries_det, bound_queries_stoch,
                      SufficientDecreaseCheck)
from .streams import LossStream, trajectory_variation

BOUND_TOL = 1e-9


def _points(trace):
    xs = np.asarray(getattr(trace, "x", trace), dtype=float)
    return xs


def local_regret_terms(trace, stream: LossStream, g: Regularizer, w: int, eta: float) -> np.ndarray:
    """``||P(x_t; grad S_{t,w}(x_t))||^2`` per round, using exact gradients."""
    xs = _points(trace)
    T = stream.T
    if xs.shape[0] < T or (hasattr(trace, "rounds") and trace.rounds < T):
        raise RangeError(f"trace does not cover the horizon T={T}")
    return np.array([residual_norm_sq(g, xs[t - 1], stream.avg_grad(t, w, xs[t - 1]), eta)
                     for t in range(1, T + 1)])


def local_regret(trace, stream: LossStream, g: Regularizer, w: int, eta: float) -> float:
    return float(local_regret_terms(trace, stream, g, w, eta).sum())


def classical_regret(trace, stream: LossStream, g: Regularizer, eta: float) -> float:
    return local_regret(trace, stream, g, 1, eta)


def _positive(**kw):
    for k, v in kw.items():
        if not v > 0:
            raise ParameterError(f"{k} must be positive, got {v}")


def bound_thm_regret_det(T, w, delta, variation) -> float:
    """Deterministic local-regret bound ``(2/w^2)(T delta^2 + V)``."""
    _positive(T=T, w=w, delta=delta)
    return 2.0 / w ** 2 * (T * delta ** 2 + variation)


def bound_thm_queries_det(w, g_x1, M, eta, L, delta) -> float:
    """Total prox-grad steps of the deterministic method: ``2w^2(g(x1)+2M)/((2-eta L) eta delta^2)``."""
    _positive(w=w, eta=eta, L=L, delta=delta)
    if not eta < 1.0 / L:
        raise ParameterError(f"eta must be < 1/L, got eta={eta}, L={L}")
    return bound_queries_det(w, g_x1, M, eta, L, delta)


def bound_thm_regret_stoch(T, w, delta, sigma, variation) -> float:
    """Expected local-regret bound ``2(T/w^2)(delta^2 + 7 sigma^2) + (6/w^2) V``."""
    _positive(T=T, w=w, delta=delta)
    return 2.0 * T / w ** 2 * (delta ** 2 + 7 * sigma ** 2) + 6.0 / w ** 2 * variation


def bound_thm_queries_stoch(w, g_x1, M, eta, L, delta, sigma) -> float:
    """Total prox-grad steps of the stochastic method under norm-bounded noise."""
    _positive(w=w, eta=eta, L=L, delta=delta)
    if not eta < 1.0 / (L + 1):
        raise ConfigError(f"iteration bound needs eta < 1/(L+1), got eta={eta}")
    den = (1 - eta * (L + 1)) * eta * delta ** 2 - sigma ** 2
    if den <= 0:
        raise ConfigError(f"iteration bound denominator is {den:.6g} <= 0; increase delta")
    return bound_queries_stoch(w, g_x1, M, eta, L, delta, sigma)


def prob_tau_exceeds(K, h1, M, w, eta, L, delta, sigma) -> float:
    """Markov-type tail bound on the inner-loop length of one round (reporting only)."""
    den = 2 * (eta * (1 - eta * L) * delta ** 2 - 2 * sigma ** 2) * K
    if den <= 0:
        return math.inf
    return (h1 + M) * w ** 2 / den


@dataclass
class OfflineParams:
    w: int
    T: int
    w_det: int | None = None
    T_det: int | None = None


def offline_params(epsilon, delta, sigma=0.0, c=0.0) -> OfflineParams:
    """Window and horizon for the offline reduction: ``w = ceil(2 sqrt((delta^2+7 sigma^2+c)/eps))``, ``T = 2w``.

    With ``sigma == 0`` the deterministic variant ``ceil(2 sqrt((delta^2+c)/eps))`` is also returned.
    """
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    w = max(1, math.ceil(2 * math.sqrt((delta ** 2 + 7 * sigma ** 2 + c) / epsilon)))
    out = OfflineParams(w, 2 * w)
    if sigma == 0:
        wd = max(1, math.ceil(2 * math.sqrt((delta ** 2 + c) / epsilon)))
        out.w_det, out.T_det = wd, 2 * wd
    return out


def offline_sfo_budget(w, g_x1, M, eta, L, delta, sigma) -> float:
    """SFO calls implied by the iteration bound: ``w`` samples per inner step plus one per round."""
    return w * bound_queries_stoch(w, g_x1, M, eta, L, delta, sigma) + 2 * w


def sample_tstar(w: int, T: int, rng: np.random.Generator) -> int:
    if not 1 <= w <= T:
        raise RangeError(f"need 1 <= w <= T, got w={w}, T={T}")
    return int(rng.integers(w, T + 1))


@dataclass
class BoundReport:
    name: str
    measured: float
    bound: float
    passed: bool
    tolerance: float = BOUND_TOL
    inputs: dict = field(default_factory=dict)
    enforced: bool = True

    @property
    def slack(self) -> float:
        return self.bound - self.measured

    @classmethod
    def check(cls, name, measured, bound, tolerance=BOUND_TOL, enforced=True, **inputs):
        measured, bound = float(measured), float(bound)
        return cls(name, measured, bound, measured <= bound + tolerance, tolerance, inputs, enforced)

    def to_dict(self):
        d = asdict(self)
        d["slack"] = self.slack
        return d


@dataclass
class RunReport:
    solver: str
    config: dict
    local_regret: float
    trajectory_variation: float
    tau: int
    sfo_calls: int
    bounds: list

    @property
    def passed(self) -> bool:
        return all(b.passed for b in self.bounds if b.enforced)

    def bound(self, name) -> BoundReport:
        for b in self.bounds:
            if b.name == name:
                return b
        raise KeyError(name)

    def to_dict(self):
        return {"solver": self.solver, "config": self.config, "local_regret": self.local_regret,
                "trajectory_variation": self.trajectory_variation, "tau": self.tau,
                "sfo_calls": self.sfo_calls, "passed": self.passed,
                "bounds": [b.to_dict() for b in self.bounds]}


def evaluate_run(trace: SolverTrace, stream: LossStream, g: Regularizer, cfg: StepConfig,
                 noise: NoiseModel | None = None, x1=None) -> RunReport:
    """Measure a finished run and evaluate every applicable bound. Pure in its inputs."""
    reg = local_regret(trace, stream, g, cfg.w, cfg.eta)
    var = trajectory_variation(trace, stream, cfg.w)
    x1 = trace.x[0] if x1 is None else x1
    g_x1 = g.value(x1)
    tau = trace.tau_total
    bounds = []
    if trace.solver == "alg1":
        bounds.append(BoundReport.check(
            "regret_det", reg, bound_thm_regret_det(cfg.T, cfg.w, cfg.delta, var),
            tolerance=BOUND_TOL * max(1.0, reg), T=cfg.T, w=cfg.w, delta=cfg.delta, variation=var))
        bounds.append(BoundReport.check(
            "queries_det", tau, bound_thm_queries_det(cfg.w, g_x1, stream.M, cfg.eta, cfg.L, cfg.delta),
            tolerance=0.0, w=cfg.w, g_x1=g_x1, M=stream.M, eta=cfg.eta, L=cfg.L, delta=cfg.delta))
        required = SufficientDecreaseCheck(cfg).required
        decs = [d for rnd in trace.decreases for d in rnd]
        worst = min(decs) if decs else math.inf
        # measured = shortfall below the required decrease
        bounds.append(BoundReport.check(
            "sufficient_decrease", required - worst if decs else -math.inf, 0.0, tolerance=1e-9,
            required=required, steps=len(decs)))
    else:
        sigma = 0.0 if noise is None else noise.sigma
        bounds.append(BoundReport.check(
            "regret_stoch", reg, bound_thm_regret_stoch(cfg.T, cfg.w, cfg.delta, sigma, var),
            enforced=False, T=cfg.T, w=cfg.w, delta=cfg.delta, sigma=sigma, variation=var))
        bounds.append(BoundReport.check(
            "sfo_accounting", abs(trace.sfo_calls - (cfg.T + cfg.w * tau)), 0.0, tolerance=0.0,
            sfo_calls=trace.sfo_calls, expected=cfg.T + cfg.w * tau))
        if noise is not None and noise.bounded and cfg.eta < 1 / (cfg.L + 1):
            try:
                qb = bound_thm_queries_stoch(cfg.w, g_x1, stream.M, cfg.eta, cfg.L, cfg.delta, sigma)
            except ConfigError:
                qb = None
            if qb is not None:
                bounds.append(BoundReport.check(
                    "queries_stoch", tau, qb, tolerance=0.0, w=cfg.w, g_x1=g_x1, M=stream.M,
                    eta=cfg.eta, L=cfg.L, delta=cfg.delta, sigma=sigma))
    by_test = trace.exited_by_test[: trace.rounds]
    bad_exit = np.sum(by_test & ~(trace.residual_at_exit[: trace.rounds] <= cfg.delta / cfg.w + 1e-12))
    bounds.append(BoundReport.check("exit_residual", int(bad_exit), 0, tolerance=0.0))
    return RunReport(trace.solver, cfg.to_dict(), reg, var, tau, int(trace.sfo_calls), bounds)
