"""Acceptance suite. Each test prints one ``criterion N: PASS|FAIL`` line, then asserts.

Run alone with ``pytest tests/test_acceptance.py -v -s`` to see only these lines.
"""

import math
import time

import numpy as np
import pytest

from tsprox.experiments import preset, run_experiment
from tsprox.games import run_simultaneous, single_player_game
from tsprox.oracles import NoiseModel, StochasticOracle
from tsprox.ontap import OnTAPInstance, default_instance, ontap_smooth_grad, ontap_smooth_loss
from tsprox.prox_core import BoxIndicator, all_kinds_sample, residual_norm
from tsprox.solvers import StepConfig, min_delta_alg2, run_alg1, run_alg2
from tsprox.streams import LossStream, OfflineStream, QuadraticDriftStream, quadratic_function


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail
    return emit


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def _bound_failures(result, name):
    return sum(1 for r in result.replications for rep in r.reports
               if rep is None or not rep.bound(name).passed)


@pytest.fixture(scope="module")
def det_runs():
    return _timed(lambda: run_experiment(preset("det-regret")))


@pytest.fixture(scope="module")
def stoch_runs():
    return _timed(lambda: run_experiment(preset("stoch-regret")))


# -- independent recomputation of the deterministic quantities ----------------

def _naive_regret_and_variation(trace, stream, eta, w):
    reg = var = 0.0
    for t in range(1, stream.T + 1):
        x = trace.x[t - 1]
        d = LossStream.avg_grad(stream, t, w, x)
        p = np.clip(x - eta * d, -1.0, 1.0)
        reg += float(np.sum(((x - p) / eta) ** 2))
        dv = stream.grad(t, x) - (stream.grad(t - w, x) if t > w else 0.0)
        var += float(dv @ dv)
    return reg, var


def test_criterion_01_deterministic_regret(det_runs, verdict):
    result, secs = det_runs
    reps = result.replications
    worst = 0.0
    for r in reps:
        st = r.echo["step"]
        stream = QuadraticDriftStream(**{k: v for k, v in r.echo["stream"].items() if k != "kind"})
        reg, var = _naive_regret_and_variation(r.traces[0], stream, st["eta"], st["w"])
        assert reg == pytest.approx(r.reports[0].local_regret, rel=1e-9, abs=1e-12)
        bound = 2 / st["w"] ** 2 * (st["T"] * st["delta"] ** 2 + var)
        worst = max(worst, reg / bound)
    fails = _bound_failures(result, "regret_det")
    ok = len(reps) == 30 and fails == 0 and worst <= 1 + 1e-12 and secs < 10
    verdict(1, ok, f"runs={len(reps)} violations={fails} max Reg/bound={worst:.4f} runtime={secs:.1f}s (<10s)")


def test_criterion_02_deterministic_queries(det_runs, verdict):
    result, _ = det_runs
    worst = 0.0
    for r in result.replications:
        st, rep = r.echo["step"], r.reports[0]
        inputs = rep.bound("queries_det").inputs
        b = (2 * st["w"] ** 2 * (inputs["g_x1"] + 2 * inputs["M"])
             / ((2 - st["eta"] * st["L"]) * st["eta"] * st["delta"] ** 2))
        worst = max(worst, r.traces[0].tau_total / b)
    fails = _bound_failures(result, "queries_det")
    verdict(2, fails == 0 and worst <= 1, f"violations={fails} max tau/bound={worst:.4g}")


def test_criterion_03_sufficient_decrease(det_runs, verdict):
    result, _ = det_runs
    steps = short = 0
    for r in result.replications:
        st = r.echo["step"]
        need = (st["eta"] - st["eta"] ** 2 * st["L"] / 2) * st["delta"] ** 2 / st["w"] ** 2
        for rnd in r.traces[0].decreases:
            steps += len(rnd)
            short += sum(1 for d in rnd if d < need - 1e-9)
    fails = _bound_failures(result, "sufficient_decrease")
    verdict(3, steps > 0 and short == 0 and fails == 0, f"inner steps checked={steps} violations={short}")


def test_criterion_04_prox_properties(verdict):
    rng = np.random.default_rng(2024)
    n, trials = 8, 1000
    bad = {}

    def run():
        for g in all_kinds_sample(n, rng):
            viol = 0
            for _ in range(trials):
                a, b = rng.normal(scale=3, size=(2, n))
                eta = rng.uniform(1e-3, 3)
                if np.linalg.norm(g.prox(a, eta) - g.prox(b, eta)) > np.linalg.norm(a - b) * (1 + 1e-12) + 1e-12:
                    viol += 1
            for _ in range(trials):
                x = g.prox(rng.normal(scale=2, size=n), 1.0)
                d1, d2 = rng.normal(scale=3, size=(2, n))
                eta = rng.uniform(1e-3, 3)
                lhs = residual_norm(g, x, d1 + d2, eta)
                if lhs > (residual_norm(g, x, d1, eta) + np.linalg.norm(d2)) * (1 + 1e-9) + 1e-9:
                    viol += 1
            for _ in range(trials):
                v = rng.normal(scale=3, size=n)
                eta = rng.uniform(1e-3, 3)
                p = g.prox(v, eta)
                z = g.prox(rng.normal(scale=2, size=n), 1.0)
                rhs = eta * g.value(p) + (v - p) @ (z - p)
                if eta * g.value(z) < rhs - 1e-9 * (1 + abs(rhs)):
                    viol += 1
            bad[g.kind] = viol

    _, secs = _timed(run)
    ok = len(bad) == 5 and not any(bad.values()) and secs < 5
    verdict(4, ok, f"kinds={sorted(bad)} violations={sum(bad.values())} "
                   f"trials={3 * trials} per kind runtime={secs:.2f}s (<5s)")


def test_criterion_05_oracle_axioms(verdict):
    sigma, n = 0.5, 5
    stream = QuadraticDriftStream(n, 3, seed=0)
    x = np.linspace(-0.5, 0.5, n)
    exact = stream.grad(1, x)
    notes, ok = [], True

    def stats(z):
        se = z.std(axis=0, ddof=1) / math.sqrt(len(z))
        return bool(np.all(np.abs(z.mean(axis=0)) <= 4 * se)), float(np.mean(np.sum(z * z, axis=1)))

    def run():
        nonlocal ok
        for noise in (NoiseModel.gaussian(sigma), NoiseModel.ball(sigma)):
            # 1e5 draws from the law the oracle adds
            z = noise.sample(np.random.default_rng(7), n, size=100_000)
            unbiased, m2 = stats(z)
            good = unbiased and m2 <= 1.05 * sigma ** 2
            if noise.kind == "ball":
                peak = float(np.linalg.norm(z, axis=1).max())
                good = good and peak <= sigma
                notes.append(f"ball max||noise||={peak:.6f}<=sigma")
            # 1e4 draws through the keyed per-call oracle path
            o = StochasticOracle(noise, seed=11)
            o.enter_round(1, 1)
            zo = np.array([o.sample_grad(stream, 1, x, k=k).vector for k in range(10_000)]) - exact
            unbiased_o, m2_o = stats(zo)
            good = good and unbiased_o and m2_o <= 1.05 * sigma ** 2
            if noise.kind == "ball":
                good = good and float(np.linalg.norm(zo, axis=1).max()) <= sigma
            notes.append(f"{noise.kind}: E||z||^2={m2:.4f} (oracle {m2_o:.4f}) vs 1.05 sigma^2={1.05 * sigma ** 2:.4f}")
            ok = ok and good

    _, secs = _timed(run)
    verdict(5, ok and secs < 5, "; ".join(notes) + f"; runtime={secs:.2f}s (<5s)")


def test_criterion_06_stochastic_regret(stoch_runs, verdict):
    result, secs = stoch_runs
    claim = next(c for c in result.claims if c["name"].startswith("mean_regret_stoch"))
    # independent recomputation of the claim from the stored per-run quantities
    reps = [r.reports[0] for r in result.replications]
    st = reps[0].config
    mean_reg = float(np.mean([r.local_regret for r in reps]))
    mean_var = float(np.mean([r.trajectory_variation for r in reps]))
    bound = 2 * st["T"] / st["w"] ** 2 * (st["delta"] ** 2 + 7 * st["sigma"] ** 2) + 6 / st["w"] ** 2 * mean_var
    assert claim["measured"] == pytest.approx(mean_reg) and claim["bound"] == pytest.approx(bound)
    status = "pass" if mean_reg <= bound else ("flag" if mean_reg <= 1.05 * bound else "fail")
    ok = len(reps) == 50 and status != "fail" and secs < 60
    verdict(6, ok, f"seeds={len(reps)} mean Reg={mean_reg:.4f} bound={bound:.4f} status={status} "
                   f"runtime={secs:.1f}s (<60s)")


def test_criterion_07_stochastic_accounting(stoch_runs, verdict):
    result, _ = stoch_runs
    capped = sum(r.capped for r in result.replications)
    exact = queries = 0
    for r in result.replications:
        tr, st = r.traces[0], r.echo["step"]
        exact += tr.sfo_calls == st["T"] + st["w"] * tr.tau_total
        queries += r.reports[0].bound("queries_stoch").passed
    n = len(result.replications)
    verdict(7, capped == 0 and exact == n and queries == n,
            f"runs={n} exact sfo accounting={exact} tau within bound={queries} capped={capped}")


def test_criterion_08_offline_reduction(verdict):
    result, secs = _timed(lambda: run_experiment(preset("offline")))
    info = result.info
    stat = float(np.mean([r.extra["stationarity"] for r in result.replications]))
    eps = preset("offline").params["epsilon"]
    ok = len(result.replications) == 30 and stat <= eps and not result.capped and secs < 60
    verdict(8, ok, f"w={info['w']} T={info['T']} c={info['c']:.3f} mean stationarity={stat:.3g} <= {eps}; "
                   f"mean SFO calls={info['mean_sfo_calls']:.0f} vs formula {info['sfo_formula']:.3g}; "
                   f"runtime={secs:.1f}s (<60s)")


def test_criterion_09_window_separation(verdict):
    result = run_experiment(preset("appendix-b"))
    ratio = {}
    for w in (1, 100):
        reps = [r for r in result.replications if r.w == w]
        assert len(reps) == 20
        ratio[w] = float(np.mean([r.reports[0].local_regret / r.echo["step"]["T"] for r in reps]))
    ok = ratio[1] >= 0.4 and ratio[100] <= 0.05 and _bound_failures(result, "regret_det") == 0
    verdict(9, ok, f"mean Reg_1/T={ratio[1]:.4f} (>=0.4) mean Reg_100/T={ratio[100]:.3g} (<=0.05)")


def test_criterion_10_traffic_assignment(verdict):
    net, ods, bpr = default_instance(0)
    model = OnTAPInstance(net, ods, bpr)
    rng = np.random.default_rng(10)
    h, worst = 1e-6, 0.0
    for x in model.random_profiles(rng, 100):
        lam = rng.uniform(0.2, 1.0, len(ods))
        g = ontap_smooth_grad(net, ods, bpr, x, lam)
        fd = np.array([(ontap_smooth_loss(net, ods, bpr, x + h * e, lam, check_domain=False)
                        - ontap_smooth_loss(net, ods, bpr, x - h * e, lam, check_domain=False)) / (2 * h)
                       for e in np.eye(x.size)])
        worst = max(worst, float(np.max(np.abs(fd - g)) / np.max(np.abs(g))))
    result = run_experiment(preset("ontap"))
    main = [r for r in result.replications if r.arm == "main"]
    det_ok = all(r.reports[0].bound(b).passed for r in main for b in ("regret_det", "queries_det"))
    attuned = next(c for c in result.claims if c["name"].startswith("attuned"))
    ok = worst <= 1e-5 and det_ok and attuned["status"] == "pass" and not result.capped
    verdict(10, ok, f"FD max rel err={worst:.2e} (<=1e-5); bounds on {len(main)} runs ok={det_ok}; "
                    f"mean V attuned={attuned['measured']:.4g} < period 1.5w={attuned['bound']:.4g}")


def test_criterion_11_games(verdict):
    def run():
        rng = np.random.default_rng(3)
        B = rng.normal(size=(4, 4))
        A, b = 0.5 * (B + B.T), rng.normal(size=4)
        game = single_player_game(A, b)
        stream = OfflineStream(quadratic_function(A, b), 25)
        box = BoxIndicator.uniform(4, -1, 1)
        L = game.L[0]
        c1 = StepConfig(eta=0.5 / L, L=L, w=3, delta=0.05, T=25)
        same = np.array_equal(run_simultaneous(game, "alg1", c1).traces[0].x, run_alg1(stream, box, c1).x)
        eta = 0.5 / (L + 1)
        noise = NoiseModel.ball(0.2)
        c2 = StepConfig(eta=eta, L=L, w=3, delta=1.1 * min_delta_alg2(eta, L, 0.2, True), T=25)
        same = same and np.array_equal(run_simultaneous(game, "alg2", c2, noise, seed=5).traces[0].x,
                                       run_alg2(stream, box, c2, noise, seed=5).x)
        return same, run_experiment(preset("games"))

    (same, result), secs = _timed(run)
    rep = result.replications[0]
    w, T, fr = rep.w, rep.echo["step"]["T"], rep.extra["first_round"]
    fires = fr is not None and w <= fr <= T
    eps = rep.echo["epsilon"]
    # the residuals at the firing round are below epsilon for every player
    below = fires and max(rep.extra["residuals"][fr - 1]) <= eps
    verdict(11, same and fires and below and secs < 30,
            f"m=1 bit-exact={same}; w={w} T={T} fires at t*={fr} eps={eps}; runtime={secs:.1f}s (<30s)")
