"""Non-convex m-player games driven by the time-smoothed solvers.

Player ``i`` sees the online loss ``f_t^i(z) = f^i(x_t^1, ..., z, ..., x_t^m)``:
its own cost with every other block frozen at the round-``t`` profile. The
driver runs one solver per player in lock-step. At the start of each round
all players commit their current block, and only then do the per-player
inner loops run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (CappedRunError, ConfigError, ParameterError, ProtocolError, RangeError,
                     ShapeError, TsproxError)
from .oracles import NoiseModel, StochasticOracle, scaled_oracle
from .prox_core import BoxIndicator, Regularizer, regularizer_from_dict, residual_norm_sq
from .solvers import (SolverTrace, StepConfig, SufficientDecreaseCheck, WindowState, _initial_point,
                      alg1_round, alg2_round, default_cap, validate_config_alg2)
from .streams import LossStream, RevealGuard, trajectory_variation


@dataclass(frozen=True)
class QuadraticCost:
    """Joint cost ``0.5 x^T Q x + b^T x`` on the concatenated profile (``Q`` symmetrized)."""

    Q: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] != b.size:
            raise ShapeError(f"Q {Q.shape} and b {b.shape} do not match")
        object.__setattr__(self, "Q", 0.5 * (Q + Q.T))
        object.__setattr__(self, "b", b.reshape(-1))

    def value(self, x) -> float:
        return float(0.5 * x @ self.Q @ x + self.b @ x)

    def grad(self, x) -> np.ndarray:
        return self.Q @ x + self.b

    def negated(self) -> "QuadraticCost":
        return QuadraticCost(-self.Q, -self.b)

    def to_dict(self):
        return {"Q": self.Q.tolist(), "b": self.b.tolist()}


class GameSpec:
    """``m`` players with block dimensions ``dims``, one cost per player, one regularizer each.

    ``radius`` bounds every coordinate of the joint domain; it feeds the
    per-player value bound ``M``. The default regularizers are the matching boxes.
    """

    def __init__(self, dims, costs, regs=None, radius: float = 1.0, name: str = "game",
                 spec: dict | None = None):
        self.dims = tuple(int(d) for d in dims)
        if not self.dims or min(self.dims) < 1:
            raise ParameterError(f"every player needs a positive dimension, got {self.dims}")
        self.m = len(self.dims)
        self.N = sum(self.dims)
        self.costs = tuple(costs)
        if len(self.costs) != self.m:
            raise ParameterError(f"{len(self.costs)} costs for {self.m} players")
        for c in self.costs:
            if c.b.size != self.N:
                raise ShapeError(f"cost acts on dimension {c.b.size}, profile has {self.N}")
        self.radius = float(radius)
        if regs is None:
            regs = [BoxIndicator.uniform(n, -self.radius, self.radius) for n in self.dims]
        self.regs = tuple(regs)
        if len(self.regs) != self.m:
            raise ParameterError(f"{len(self.regs)} regularizers for {self.m} players")
        for g, n in zip(self.regs, self.dims):
            g.check_dim(n)
        self.offsets = np.concatenate([[0], np.cumsum(self.dims)]).astype(int)
        self.name = name
        self._spec = spec
        self.L = tuple(self._block_L(i) for i in range(self.m))
        self.M = tuple(self._value_bound(i) for i in range(self.m))

    def block(self, i: int) -> slice:
        if not 0 <= i < self.m:
            raise RangeError(f"player {i} outside [0, {self.m})")
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    def _block_L(self, i):
        s = self.block(i)
        Qii = self.costs[i].Q[s, s]
        # a cost linear in the own block is L-smooth for every L > 0
        return float(np.abs(np.linalg.eigvalsh(Qii)).max()) or 1.0

    def _value_bound(self, i):
        c = self.costs[i]
        L = float(np.abs(np.linalg.eigvalsh(c.Q)).max())
        return float(0.5 * L * self.N * self.radius ** 2 + self.radius * np.abs(c.b).sum())

    def join(self, blocks) -> np.ndarray:
        blocks = [np.asarray(b, dtype=float) for b in blocks]
        if len(blocks) != self.m or any(b.shape != (n,) for b, n in zip(blocks, self.dims)):
            raise ShapeError("profile blocks do not match the player dimensions")
        return np.concatenate(blocks)

    def split(self, x) -> list[np.ndarray]:
        x = np.asarray(x, dtype=float)
        return [x[self.block(i)] for i in range(self.m)]

    def value(self, i: int, x) -> float:
        return self.costs[i].value(np.asarray(x, dtype=float))

    def block_grad(self, i: int, x) -> np.ndarray:
        """Partial gradient of player ``i``'s cost with respect to its own block."""
        return self.costs[i].grad(np.asarray(x, dtype=float))[self.block(i)]

    def to_dict(self):
        if self._spec is not None:
            return dict(self._spec)
        return {"kind": "explicit", "dims": list(self.dims), "radius": self.radius,
                "costs": [c.to_dict() for c in self.costs],
                "regs": [g.to_dict() for g in self.regs]}


def quadratic_game(dims, seed: int = 0, radius: float = 1.0, coupling: float = 0.5,
                   neg_frac: float = 0.3) -> GameSpec:
    """Common-cost game on a random symmetric ``Q`` whose diagonal blocks are indefinite."""
    rng = np.random.default_rng(seed)
    dims = tuple(int(d) for d in dims)
    N = sum(dims)
    Q = coupling * rng.standard_normal((N, N))
    Q = 0.5 * (Q + Q.T)
    off = 0
    for n in dims:
        U, _ = np.linalg.qr(rng.standard_normal((n, n)))
        eig = rng.uniform(0.5, 2.0, n)
        eig[: int(round(neg_frac * n))] *= -1
        Q[off:off + n, off:off + n] = (U * eig) @ U.T
        off += n
    b = rng.uniform(-1.0, 1.0, N)
    cost = QuadraticCost(Q, b)
    spec = {"kind": "quadratic", "dims": list(dims), "seed": int(seed), "radius": radius,
            "coupling": coupling, "neg_frac": neg_frac}
    return GameSpec(dims, [cost] * len(dims), radius=radius, name=f"quadratic{dims}", spec=spec)


def bilinear_game(A, zero_sum: bool = False, radius: float = 1.0) -> GameSpec:
    """``f(x1, x2) = x1^T A x2``; with ``zero_sum`` the second player minimizes ``-f``."""
    A = np.asarray(A, dtype=float)
    n1, n2 = A.shape
    Q = np.zeros((n1 + n2, n1 + n2))
    Q[:n1, n1:] = A
    Q[n1:, :n1] = A.T
    cost = QuadraticCost(Q, np.zeros(n1 + n2))
    costs = [cost, cost.negated() if zero_sum else cost]
    spec = {"kind": "bilinear", "A": A.tolist(), "zero_sum": bool(zero_sum), "radius": radius}
    return GameSpec((n1, n2), costs, radius=radius, name="bilinear", spec=spec)


def single_player_game(A, b, radius: float = 1.0, reg: Regularizer | None = None) -> GameSpec:
    b = np.asarray(b, dtype=float)
    return GameSpec((b.size,), [QuadraticCost(A, b)], None if reg is None else [reg], radius=radius,
                    name="single")


def game_from_dict(spec: dict) -> GameSpec:
    kind = spec.get("kind", "quadratic")
    radius = float(spec.get("radius", 1.0))
    if kind == "quadratic":
        game = quadratic_game(spec["dims"], int(spec.get("seed", 0)), radius,
                              float(spec.get("coupling", 0.5)), float(spec.get("neg_frac", 0.3)))
    elif kind == "bilinear":
        game = bilinear_game(spec["A"], bool(spec.get("zero_sum", False)), radius)
    elif kind == "explicit":
        costs = [QuadraticCost(c["Q"], c["b"]) for c in spec["costs"]]
        regs = [regularizer_from_dict(r) for r in spec["regs"]] if "regs" in spec else None
        return GameSpec(spec["dims"], costs, regs, radius, spec=spec)
    else:
        raise ParameterError(f"unknown game kind {kind!r}")
    if "regs" in spec:
        game = GameSpec(game.dims, game.costs, [regularizer_from_dict(r) for r in spec["regs"]],
                        radius, game.name, spec)
    return game


# ---------------------------------------------------------------------------
# joint history and per-player streams


class JointHistory:
    """Round-indexed profiles. Round ``t`` becomes readable once every player committed ``x_t``."""

    def __init__(self, dims, T: int):
        self.dims = tuple(dims)
        self.m = len(self.dims)
        self.T = int(T)
        self.blocks = [np.full((self.T + 1, n), np.nan) for n in self.dims]
        self.last = np.zeros(self.m, dtype=int)

    def commit(self, t: int, i: int, x) -> None:
        if t != self.last[i] + 1:
            raise ProtocolError(f"player {i} committed round {t} after round {self.last[i]}")
        if t > self.T + 1:
            raise RangeError(f"round {t} is beyond the horizon T={self.T}")
        self.blocks[i][t - 1] = x
        self.last[i] = t

    def complete(self, t: int) -> bool:
        return bool(np.all(self.last >= t))

    def profile(self, t: int) -> list[np.ndarray]:
        if not self.complete(t):
            raise ProtocolError(f"round {t} queried before all players committed")
        return [b[t - 1] for b in self.blocks]

    @classmethod
    def from_traces(cls, traces) -> "JointHistory":
        traces = list(traces)
        T = min(tr.rounds for tr in traces)
        h = cls([tr.x.shape[1] for tr in traces], T)
        for i, tr in enumerate(traces):
            h.blocks[i][:T] = tr.x[:T]
            h.last[i] = T
        return h


class PlayerStream(LossStream):
    """Player ``i``'s online losses against the other players' committed blocks."""

    def __init__(self, game: GameSpec, i: int, history: JointHistory):
        if history.dims != game.dims:
            raise ShapeError("history does not match the game's player dimensions")
        self.game, self.i, self.history = game, int(i), history
        self.n = game.dims[self.i]
        self.T = history.T
        self.L = game.L[self.i]
        self.M = game.M[self.i]
        self.descriptor = f"{game.name}[player {self.i}]"

    def _joint(self, t, z):
        blocks = list(self.history.profile(t))
        blocks[self.i] = z
        return np.concatenate(blocks)

    def _value(self, t, x):
        return self.game.value(self.i, self._joint(t, x))

    def _grad(self, t, x):
        return self.game.block_grad(self.i, self._joint(t, x))

    def to_dict(self):
        return {"kind": "player", "player": self.i, "game": self.game.to_dict(), "T": self.T}


def player_stream(game: GameSpec, i: int, history: JointHistory) -> PlayerStream:
    return PlayerStream(game, i, history)


# ---------------------------------------------------------------------------
# simultaneous play


@dataclass
class GameRun:
    game: GameSpec
    solver: str
    cfg: StepConfig
    traces: list
    history: JointHistory
    streams: list = field(default_factory=list)

    def regrets(self) -> list[float]:
        from .metrics import local_regret
        return [local_regret(tr, s, g, self.cfg.w, self.cfg.eta)
                for tr, s, g in zip(self.traces, self.streams, self.game.regs)]

    def variations(self) -> list[float]:
        return [trajectory_variation(tr, s, self.cfg.w) for tr, s in zip(self.traces, self.streams)]


class PlayerError(TsproxError):
    """A solver error raised while advancing one player; ``cause`` keeps the original."""

    def __init__(self, player: int, cause: Exception):
        super().__init__(f"player {player}: {cause}")
        self.player = player
        self.cause = cause


def run_simultaneous(game: GameSpec, solver: str, cfg: StepConfig, noise: NoiseModel | None = None,
                     seed: int = 0, x1=None, check_decrease: bool = True,
                     iteration_bounds: bool = False) -> GameRun:
    """Run ``alg1`` or ``alg2`` for all players with a common ``(eta, w, delta, T)``.

    Player ``i`` draws its oracle noise from the key ``(seed, i)``. With one
    player the result equals :func:`~tsprox.solvers.run_alg1` /
    :func:`~tsprox.solvers.run_alg2` bit for bit.
    """
    if solver not in ("alg1", "alg2"):
        raise ParameterError(f"solver must be 'alg1' or 'alg2', got {solver!r}")
    if solver == "alg2":
        if noise is None:
            raise ConfigError("alg2 needs a noise model")
        validate_config_alg2(cfg, noise, iteration_bounds)
    else:
        cfg.validate()
    m = game.m
    history = JointHistory(game.dims, cfg.T)
    streams = [player_stream(game, i, history) for i in range(m)]
    guards = [RevealGuard(s) for s in streams]
    starts = x1 if x1 is not None else [None] * m
    xs = [_initial_point(game.regs[i], game.dims[i], starts[i]) for i in range(m)]
    traces = [SolverTrace.empty(solver, cfg.T, n) for n in game.dims]
    if solver == "alg1":
        caps = [default_cap(cfg, game.regs[i].value(xs[i]), game.M[i]) for i in range(m)]
        hooks = [SufficientDecreaseCheck(cfg) if check_decrease else None for _ in range(m)]
    else:
        caps = [default_cap(cfg, game.regs[i].value(xs[i]), game.M[i], noise) for i in range(m)]
        oracles = [StochasticOracle(scaled_oracle(noise, cfg.w), seed=seed, player=i) for i in range(m)]
        windows = [WindowState(cfg.w, xs[i]) for i in range(m)]
    for t in range(1, cfg.T + 1):
        for i in range(m):
            history.commit(t, i, xs[i])
            traces[i].x[t - 1] = xs[i]
        # every player reveals f_t^i from the same frozen profile; the inner loops are independent
        for i in range(m):
            guards[i].announce(t)
            try:
                if solver == "alg1":
                    xs[i], tau_t, res, dec = alg1_round(guards[i], game.regs[i], cfg, t, xs[i],
                                                        caps[i], hooks[i])
                    traces[i].record(t, tau_t, res, tau_t + 1, dec)
                else:
                    xs[i], tau_t, res, calls = alg2_round(guards[i], game.regs[i], cfg, t, xs[i],
                                                          oracles[i], windows[i], caps[i])
                    traces[i].record(t, tau_t, res, calls)
            except CappedRunError as err:
                err.trace = traces[i]
                raise PlayerError(i, err) from err
            except TsproxError as err:
                raise PlayerError(i, err) from err
    for i in range(m):
        history.commit(cfg.T + 1, i, xs[i])
        traces[i].x[cfg.T] = xs[i]
        traces[i].sfo_calls = (int(traces[i].oracle_calls.sum()) if solver == "alg1"
                               else oracles[i].calls)
    return GameRun(game, solver, cfg, traces, history, streams)


# ---------------------------------------------------------------------------
# equilibrium detection


def _history_of(traces, game: GameSpec) -> tuple[list, JointHistory]:
    if isinstance(traces, GameRun):
        return traces.traces, traces.history
    traces = list(traces)
    if len(traces) != game.m:
        raise ParameterError(f"{len(traces)} traces for {game.m} players")
    return traces, JointHistory.from_traces(traces)


def equilibrium_residuals(traces, game: GameSpec, t: int, eta: float, w: int) -> np.ndarray:
    """Per-player ``||P(x_t^i; grad S^i_{t,w}(x_t^i))||^2`` with exact gradients."""
    traces, history = _history_of(traces, game)
    if not 1 <= t <= history.T:
        raise RangeError(f"round {t} outside [1, {history.T}]")
    out = np.empty(game.m)
    for i in range(game.m):
        s = PlayerStream(game, i, history)
        x = traces[i].x[t - 1]
        out[i] = residual_norm_sq(game.regs[i], x, s.avg_grad(t, w, x), eta)
    return out


def equilibrium_check(traces, game: GameSpec, t: int, eta: float, w: int, epsilon: float) -> bool:
    """True iff round ``t`` is an ``epsilon``-smoothed local equilibrium for window ``w``."""
    if epsilon == math.inf:
        if not 1 <= t:
            raise RangeError(f"round {t} must be >= 1")
        return True
    return bool(np.all(equilibrium_residuals(traces, game, t, eta, w) <= epsilon))


def first_equilibrium_round(traces, game: GameSpec, eta: float, w: int, epsilon: float,
                            start: int | None = None) -> int | None:
    traces, history = _history_of(traces, game)
    for t in range(w if start is None else start, history.T + 1):
        if equilibrium_check(traces, game, t, eta, w, epsilon):
            return t
    return None


@dataclass
class EquilibriumWindow:
    statement: int
    proof: int
    w: int
    numerator: float

    @property
    def T(self) -> int:
        return self.w ** 2


def equilibrium_window(m: int, delta: float, c: float, epsilon: float, sigma: float = 0.0,
                       stochastic: bool = False) -> EquilibriumWindow:
    """Window guaranteeing an ``epsilon`` equilibrium at some ``t* >= w`` when ``T = w^2``.

    ``statement`` is ``ceil(K / sqrt(eps))`` and ``proof`` is the least ``w``
    with ``w (w-1) >= K / eps``, where ``K = 2m(delta^2 + c)`` (stochastic:
    ``2m(delta^2 + 7 sigma^2 + 6c)``). The larger of the two is used.
    """
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    K = 2 * m * (delta ** 2 + 7 * sigma ** 2 + 6 * c) if stochastic else 2 * m * (delta ** 2 + c)
    statement = max(1, math.ceil(K / math.sqrt(epsilon)))
    need = K / epsilon
    proof = max(2, math.ceil(0.5 + math.sqrt(0.25 + need)))
    while proof * (proof - 1) < need:
        proof += 1
    while proof > 2 and (proof - 1) * (proof - 2) >= need:
        proof -= 1
    return EquilibriumWindow(statement, proof, max(statement, proof), K)


@dataclass
class EquilibriumResult:
    """``window`` is the requirement implied by the measured ``c``; ``run.cfg.w`` is at least that."""

    window: EquilibriumWindow
    c: float
    c_measured: float
    run: GameRun
    first_round: int | None
    epsilon: float
    iterations: int
    history: list = field(default_factory=list)


def calibrated_equilibrium_run(game: GameSpec, epsilon: float, delta: float, eta_factor: float = 0.5,
                               c0: float = 0.0, max_iter: int = 25, growth: float = 1.5,
                               solver: str = "alg1", noise: NoiseModel | None = None,
                               seed: int = 0) -> EquilibriumResult:
    """Smallest self-consistent window on a geometric grid.

    Runs with ``T = w^2`` and measures ``c = max_i V_i / T`` on the
    trajectory. If the window required by that ``c`` exceeds ``w``, ``w``
    grows by at most ``growth`` and the run repeats. Larger windows only
    tighten the guarantee, so the first consistent ``w`` is kept.
    """
    sigma = 0.0 if noise is None else noise.sigma
    stochastic = solver == "alg2"
    L = max(game.L)
    eta = eta_factor / (L + 1 if stochastic else L)
    w = equilibrium_window(game.m, delta, c0, epsilon, sigma, stochastic).w
    log = []
    for it in range(1, max_iter + 1):
        cfg = StepConfig(eta=eta, L=L, w=w, delta=delta, T=w * w)
        run = run_simultaneous(game, solver, cfg, noise, seed)
        c = max(run.variations()) / cfg.T
        need = equilibrium_window(game.m, delta, c, epsilon, sigma, stochastic)
        log.append((w, c, need.w))
        if need.w <= w:
            break
        w = min(need.w, max(w + 1, math.ceil(growth * w)))
    else:
        raise ConfigError(f"no self-consistent window within {max_iter} pilot runs (last w={w})")
    first = first_equilibrium_round(run, game, cfg.eta, cfg.w, epsilon)
    return EquilibriumResult(need, c, c, run, first, epsilon, it, log)
