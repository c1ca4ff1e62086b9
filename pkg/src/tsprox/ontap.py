"""Online traffic assignment with quartic BPR edge costs.

A profile ``x`` concatenates one simplex block per O/D pair (fractions of
that pair's demand routed on each of its paths). Loads add over all pairs
sharing an edge: ``y_e = sum_i lambda_i sum_{p in P_i, p ∋ e} x_{i,p}``.
The smooth loss is ``sum_p x_p * sum_{e in p} (a_e + b_e y_e^4)``; the L1
robustification term lives in the regularizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DomainError, ParameterError, RangeError, ShapeError
from .prox_core import SimplexPlusL1
from .streams import LossStream

DOMAIN_TOL = 1e-6


@dataclass(frozen=True)
class Network:
    vertices: int
    edges: tuple

    def __post_init__(self):
        edges = tuple((int(a), int(b)) for a, b in self.edges)
        if not edges:
            raise ParameterError("network needs at least one edge")
        for a, b in edges:
            if not (0 <= a < self.vertices and 0 <= b < self.vertices):
                raise ParameterError(f"edge ({a}, {b}) references a missing vertex")
        object.__setattr__(self, "edges", edges)

    @property
    def E(self):
        return len(self.edges)


@dataclass(frozen=True)
class ODPair:
    origin: int
    destination: int
    paths: tuple

    def __post_init__(self):
        object.__setattr__(self, "paths", tuple(tuple(int(e) for e in p) for p in self.paths))
        if not self.paths:
            raise ParameterError("an O/D pair needs at least one path")

    def validate(self, net: Network):
        for p in self.paths:
            if not p:
                raise ParameterError("empty path")
            if len(set(p)) != len(p):
                raise ParameterError(f"path {p} repeats an edge")
            at = self.origin
            for e in p:
                if not 0 <= e < net.E:
                    raise ParameterError(f"path {p} uses unknown edge {e}")
                tail, head = net.edges[e]
                if tail != at:
                    raise ParameterError(f"path {p} is not a walk from {self.origin}")
                at = head
            if at != self.destination:
                raise ParameterError(f"path {p} does not end at {self.destination}")


@dataclass(frozen=True, eq=False)
class BPRCoefficients:
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a, b = np.asarray(self.a, float), np.asarray(self.b, float)
        if a.shape != b.shape or a.ndim != 1:
            raise ShapeError("BPR coefficients need matching 1-D arrays")
        if np.any(a < 0) or np.any(b < 0):
            raise ParameterError("BPR coefficients must be nonnegative")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    def cost(self, y):
        return self.a + self.b * y ** 4

    def dcost(self, y):
        return 4 * self.b * y ** 3


@dataclass(frozen=True, eq=False)
class DemandProcess:
    """``lambda_i(t) = max(0, base_i (1 + amplitude sin(2 pi t / period + phase_i) + noise * xi_{i,t}))``."""

    base: np.ndarray
    period: float = math.inf
    amplitude: float = 0.0
    phase: np.ndarray | None = None
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        base = np.asarray(self.base, float)
        if np.any(base < 0):
            raise ParameterError("base demands must be nonnegative")
        object.__setattr__(self, "base", base)
        phase = np.zeros_like(base) if self.phase is None else np.asarray(self.phase, float)
        object.__setattr__(self, "phase", phase)

    def __call__(self, t: int) -> np.ndarray:
        season = 0.0 if math.isinf(self.period) else np.sin(2 * np.pi * t / self.period + self.phase)
        lam = self.base * (1 + self.amplitude * season)
        if self.noise > 0:
            xi = np.random.default_rng([self.seed, int(t)]).standard_normal(self.base.size)
            lam = lam + self.base * self.noise * xi
        return np.maximum(lam, 0.0)

    def to_dict(self):
        return {"base": self.base.tolist(), "period": "inf" if math.isinf(self.period) else self.period,
                "amplitude": self.amplitude, "phase": self.phase.tolist(), "noise": self.noise,
                "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        period = d.get("period", "inf")
        period = math.inf if period in ("inf", None) else float(period)
        return cls(np.asarray(d["base"], float), period, float(d.get("amplitude", 0.0)),
                   None if d.get("phase") is None else np.asarray(d["phase"], float),
                   float(d.get("noise", 0.0)), int(d.get("seed", 0)))


class OnTAPInstance:
    """Path/edge incidence and vectorized loss/gradient for a fixed network."""

    def __init__(self, net: Network, ods, bpr: BPRCoefficients):
        self.net, self.ods, self.bpr = net, tuple(ods), bpr
        if bpr.a.size != net.E:
            raise ShapeError(f"{bpr.a.size} BPR coefficients for {net.E} edges")
        for od in self.ods:
            od.validate(net)
        self.paths = [p for od in self.ods for p in od.paths]
        self.P = len(self.paths)
        self.path_od = np.array([i for i, od in enumerate(self.ods) for _ in od.paths])
        D = np.zeros((net.E, self.P))
        for j, p in enumerate(self.paths):
            D[list(p), j] = 1.0
        self.D = D
        blocks, start = [], 0
        for od in self.ods:
            blocks.append((start, start + len(od.paths)))
            start += len(od.paths)
        self.blocks = tuple(blocks)

    @property
    def N(self):
        return len(self.ods)

    def _prep(self, x, lam):
        x = np.asarray(x, float)
        lam = np.asarray(lam, float)
        if x.shape[-1] != self.P:
            raise ShapeError(f"profile has {x.shape[-1]} entries, instance has {self.P} paths")
        if lam.shape[-1] != self.N:
            raise ShapeError(f"{lam.shape[-1]} demands for {self.N} O/D pairs")
        return x, lam

    def check_profile(self, x):
        for a, b in self.blocks:
            xb = x[a:b]
            if np.any(xb < -DOMAIN_TOL) or abs(xb.sum() - 1) > DOMAIN_TOL:
                raise DomainError(f"block {a}:{b} is not on the simplex (sum {xb.sum():.9g})")

    def loads(self, x, lam):
        x, lam = self._prep(x, lam)
        return (x * lam[..., self.path_od]) @ self.D.T

    def path_costs(self, x, lam):
        return self.bpr.cost(self.loads(x, lam)) @ self.D

    def loss(self, x, lam):
        x, lam = self._prep(x, lam)
        y = (x * lam[..., self.path_od]) @ self.D.T
        z = x @ self.D.T
        return (self.bpr.cost(y) * z).sum(axis=-1)

    def grad(self, x, lam):
        x, lam = self._prep(x, lam)
        y = (x * lam[..., self.path_od]) @ self.D.T
        z = x @ self.D.T
        return self.bpr.cost(y) @ self.D + lam[..., self.path_od] * ((z * self.bpr.dcost(y)) @ self.D)

    def random_profiles(self, rng, m):
        X = np.empty((m, self.P))
        for a, b in self.blocks:
            X[:, a:b] = rng.dirichlet(np.full(b - a, 0.5), size=m)
        return X

    def vertex_profiles(self):
        grids = np.meshgrid(*[np.arange(b - a) for a, b in self.blocks], indexing="ij")
        picks = np.stack([g.ravel() for g in grids], axis=1)
        X = np.zeros((len(picks), self.P))
        for r, pick in enumerate(picks):
            for (a, _), j in zip(self.blocks, pick):
                X[r, a + j] = 1.0
        return X


def _instance(net, ods, bpr=None):
    if bpr is None:
        bpr = BPRCoefficients(np.zeros(net.E), np.zeros(net.E))
    return OnTAPInstance(net, ods, bpr)


def edge_loads(net: Network, ods, x, lam) -> np.ndarray:
    inst = _instance(net, ods)
    x = np.asarray(x, float)
    inst.check_profile(x)
    return inst.loads(x, lam)


def path_cost(net: Network, ods, bpr: BPRCoefficients, x, lam, path_id: int) -> float:
    inst = _instance(net, ods, bpr)
    if not 0 <= path_id < inst.P:
        raise RangeError(f"path id {path_id} outside [0, {inst.P})")
    return float(inst.path_costs(x, lam)[path_id])


def ontap_smooth_loss(net, ods, bpr, x, lam, check_domain: bool = True) -> float:
    inst = _instance(net, ods, bpr)
    x = np.asarray(x, float)
    if check_domain:
        inst.check_profile(x)
    return float(inst.loss(x, lam))


def ontap_smooth_grad(net, ods, bpr, x, lam, check_domain: bool = True) -> np.ndarray:
    inst = _instance(net, ods, bpr)
    x = np.asarray(x, float)
    if check_domain:
        inst.check_profile(x)
    return inst.grad(x, lam)


class OnTAPStream(LossStream):
    def __init__(self, inst: OnTAPInstance, demand: DemandProcess, T: int, n_pairs: int = 100_000,
                 seed: int = 0, inflate: float = 1.1, spec: dict | None = None):
        self.inst, self.demand, self.T = inst, demand, int(T)
        self.n = inst.P
        self.lam = np.stack([demand(t) for t in range(1, T + 1)])
        self.inflate = inflate
        self.L, self.M = self._estimate_constants(n_pairs, seed, inflate)
        self.descriptor = f"ontap(P={inst.P}, E={inst.net.E}, N={inst.N}, T={T})"
        self._spec = spec

    def _estimate_constants(self, n_pairs, seed, inflate):
        """Sampled curvature and magnitude over the simplex product, inflated by ``inflate``."""
        rng = np.random.default_rng(seed)
        inst = self.inst
        X = inst.random_profiles(rng, n_pairs)
        Y = inst.random_profiles(rng, n_pairs)
        half = n_pairs // 2
        # short pairs probe local curvature; anchor a share of them at vertices
        V = inst.vertex_profiles()
        X[: len(V)] = V
        Y[:half] = X[:half] + 1e-3 * (Y[:half] - X[:half])
        ts = rng.integers(0, self.T, size=n_pairs)
        ts[: len(V)] = np.argmax(self.lam.sum(axis=1))
        lam = self.lam[ts]
        dg = inst.grad(X, lam) - inst.grad(Y, lam)
        dx = np.linalg.norm(X - Y, axis=1)
        ok = dx > 0
        L = float(np.max(np.linalg.norm(dg[ok], axis=1) / dx[ok]))
        lam_v = np.repeat(self.lam, len(V), axis=0)
        M = max(float(np.abs(inst.loss(X, lam)).max()),
                float(np.abs(inst.loss(np.tile(V, (self.T, 1)), lam_v)).max()))
        return inflate * L, inflate * M

    def _value(self, t, x):
        return float(self.inst.loss(x, self.lam[t - 1]))

    def _grad(self, t, x):
        return self.inst.grad(x, self.lam[t - 1])

    def avg_grad(self, t, w, x):
        self._check_t(t)
        lo = max(0, t - w)
        if t <= 0:
            return np.zeros(self.n)
        return self.inst.grad(np.asarray(x, float)[None], self.lam[lo:t]).sum(axis=0) / w

    def avg_value(self, t, w, x):
        self._check_t(t)
        lo = max(0, t - w)
        if t <= 0:
            return 0.0
        return float(self.inst.loss(np.asarray(x, float)[None], self.lam[lo:t]).sum() / w)

    def to_dict(self):
        if self._spec is None:
            return super().to_dict()
        return dict(self._spec)


def default_instance(seed: int = 0):
    """Desk-scale instance: 6 vertices, 9 edges, 3 O/D pairs with 3-4 paths each."""
    net = Network(6, ((0, 1), (0, 2), (1, 3), (2, 3), (1, 2), (3, 5), (2, 4), (4, 5), (3, 4)))
    ods = (
        ODPair(0, 3, ((0, 2), (1, 3), (0, 4, 3))),
        ODPair(0, 5, ((0, 2, 5), (1, 3, 5), (1, 6, 7), (0, 4, 6, 7))),
        ODPair(1, 5, ((2, 5), (4, 6, 7), (2, 8, 7), (4, 3, 5))),
    )
    rng = np.random.default_rng(seed)
    bpr = BPRCoefficients(rng.uniform(1.0, 2.0, net.E), rng.uniform(0.5, 1.0, net.E))
    return net, ods, bpr


def default_demand(period: float = 24.0, amplitude: float = 0.3, noise: float = 0.02, seed: int = 0,
                   N: int = 3) -> DemandProcess:
    # small base demands keep the quartic curvature (and so L) moderate
    rng = np.random.default_rng([seed, 1])
    return DemandProcess(rng.uniform(0.2, 0.4, N), period, amplitude, rng.uniform(0, 2 * np.pi, N),
                         noise, seed)


def make_ontap_stream(net, ods, bpr, demand: DemandProcess, T: int, mu: float = 0.1,
                      **kw) -> tuple[OnTAPStream, SimplexPlusL1]:
    inst = OnTAPInstance(net, ods, bpr)
    stream = OnTAPStream(inst, demand, T, **kw)
    return stream, SimplexPlusL1(inst.blocks, mu)


def ontap_from_dict(spec: dict):
    if spec.get("instance", "default") == "default":
        net, ods, bpr = default_instance(int(spec.get("instance_seed", 0)))
    else:
        net = Network(int(spec["vertices"]), tuple(map(tuple, spec["edges"])))
        ods = tuple(ODPair(int(o["origin"]), int(o["destination"]), tuple(map(tuple, o["paths"])))
                    for o in spec["ods"])
        bpr = BPRCoefficients(np.asarray(spec["bpr"]["a"], float), np.asarray(spec["bpr"]["b"], float))
    d = spec.get("demand", {})
    if "base" in d:
        demand = DemandProcess.from_dict(d)
    else:
        period = d.get("period", 24.0)
        demand = default_demand(math.inf if period in ("inf", None) else float(period),
                                float(d.get("amplitude", 0.3)), float(d.get("noise", 0.02)),
                                int(d.get("seed", 0)), len(ods))
    stream, g = make_ontap_stream(net, ods, bpr, demand, int(spec["T"]), float(spec.get("mu", 0.1)),
                                  n_pairs=int(spec.get("n_pairs", 100_000)), spec=spec)
    return stream, g
