import math

import numpy as np
import pytest

from tsprox.errors import ParameterError, ProtocolError
from tsprox.games import (JointHistory, PlayerError, PlayerStream, bilinear_game, calibrated_equilibrium_run,
                          equilibrium_check, equilibrium_residuals, equilibrium_window,
                          first_equilibrium_round, game_from_dict, quadratic_game, run_simultaneous,
                          single_player_game)
from tsprox.oracles import NoiseModel
from tsprox.prox_core import BoxIndicator
from tsprox.solvers import StepConfig, min_delta_alg2, run_alg1, run_alg2
from tsprox.streams import OfflineStream, quadratic_function


def _single(seed=0, n=4, T=30):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(n, n))
    A, b = 0.5 * (B + B.T), rng.normal(size=n)
    game = single_player_game(A, b)
    stream = OfflineStream(quadratic_function(A, b), T)
    return game, stream


def test_one_player_matches_alg1_bit_for_bit():
    game, stream = _single()
    cfg = StepConfig(eta=0.5 / game.L[0], L=game.L[0], w=3, delta=0.05, T=30)
    run = run_simultaneous(game, "alg1", cfg)
    ref = run_alg1(stream, BoxIndicator.uniform(4, -1, 1), cfg)
    np.testing.assert_array_equal(run.traces[0].x, ref.x)
    np.testing.assert_array_equal(run.traces[0].tau, ref.tau)


def test_one_player_matches_alg2_bit_for_bit():
    game, stream = _single(seed=1)
    L = game.L[0]
    eta = 0.5 / (L + 1)
    cfg = StepConfig(eta=eta, L=L, w=4, delta=1.1 * min_delta_alg2(eta, L, 0.2, True), T=30)
    noise = NoiseModel.ball(0.2)
    run = run_simultaneous(game, "alg2", cfg, noise, seed=7, iteration_bounds=True)
    ref = run_alg2(stream, BoxIndicator.uniform(4, -1, 1), cfg, noise, seed=7, iteration_bounds=True)
    np.testing.assert_array_equal(run.traces[0].x, ref.x)
    assert run.traces[0].sfo_calls == ref.sfo_calls


def test_bilinear_partial_gradients():
    game = bilinear_game([[1.0]])
    x = np.array([0.3, -0.7])
    # d/dx1 (x1 x2) = x2 and d/dx2 = x1
    assert game.block_grad(0, x) == pytest.approx([-0.7])
    assert game.block_grad(1, x) == pytest.approx([0.3])
    zs = bilinear_game([[1.0]], zero_sum=True)
    assert zs.block_grad(1, x) == pytest.approx([-0.3])


def test_block_gradients_match_finite_differences():
    game = quadratic_game((3, 2), seed=4)
    rng = np.random.default_rng(0)
    h = 1e-6
    for _ in range(20):
        x = rng.uniform(-1, 1, game.N)
        for i in range(game.m):
            s = game.block(i)
            fd = []
            for k in range(s.start, s.stop):
                e = np.zeros(game.N)
                e[k] = h
                fd.append((game.value(i, x + e) - game.value(i, x - e)) / (2 * h))
            np.testing.assert_allclose(game.block_grad(i, x), fd, rtol=1e-7, atol=1e-8)


def test_history_protocol():
    h = JointHistory((2, 1), T=5)
    h.commit(1, 0, [0.0, 0.0])
    with pytest.raises(ProtocolError):
        h.profile(1)
    with pytest.raises(ProtocolError):
        h.commit(3, 1, [0.0])
    h.commit(1, 1, [1.0])
    assert h.complete(1) and not h.complete(2)


def test_player_stream_sees_frozen_opponents():
    game = bilinear_game([[2.0]])
    h = JointHistory(game.dims, T=3)
    h.commit(1, 0, [0.1])
    h.commit(1, 1, [0.5])
    s = PlayerStream(game, 0, h)
    assert s.grad(1, [0.9]) == pytest.approx([1.0])
    with pytest.raises(ProtocolError):
        s.grad(2, [0.0])


def test_infinite_epsilon_always_fires():
    game = quadratic_game((2, 2), seed=0)
    cfg = StepConfig(eta=0.5 / max(game.L), L=max(game.L), w=2, delta=0.1, T=6)
    run = run_simultaneous(game, "alg1", cfg)
    assert all(equilibrium_check(run, game, t, cfg.eta, 2, math.inf) for t in range(1, 7))
    res = equilibrium_residuals(run, game, 1, cfg.eta, 2)
    assert equilibrium_check(run, game, 1, cfg.eta, 2, float(res.max()))
    assert not equilibrium_check(run, game, 1, cfg.eta, 2, 0.5 * float(res.max()))


def _least_w(need):
    w = 1
    while w * (w - 1) < need:
        w += 1
    return w


@pytest.mark.parametrize("m, delta, c, eps", [(2, 0.1, 0.0, 0.05), (2, 0.1, 1.0, 0.01), (3, 0.5, 2.0, 0.2),
                                              (1, 1.0, 0.0, 1.0)])
def test_window_formula(m, delta, c, eps):
    win = equilibrium_window(m, delta, c, eps)
    K = 2 * m * (delta ** 2 + c)
    assert win.statement == max(1, math.ceil(K / math.sqrt(eps)))
    assert win.proof == max(2, _least_w(K / eps))
    assert win.w == max(win.statement, win.proof) and win.T == win.w ** 2


def test_stochastic_window_numerator():
    win = equilibrium_window(2, 0.1, 0.5, 0.1, sigma=0.2, stochastic=True)
    assert win.numerator == pytest.approx(4 * (0.01 + 7 * 0.04 + 3.0))
    with pytest.raises(ParameterError):
        equilibrium_window(2, 0.1, 0, 0)


def test_average_residual_is_bounded_by_the_bookkeeping_inequality():
    # sum_t ||P||^2 <= 2/w^2 (T delta^2 + V) per player, as in the single-agent case
    game = quadratic_game((3, 3), seed=1)
    L = max(game.L)
    cfg = StepConfig(eta=0.5 / L, L=L, w=6, delta=0.1, T=36)
    run = run_simultaneous(game, "alg1", cfg)
    for reg, var in zip(run.regrets(), run.variations()):
        assert reg <= 2 / cfg.w ** 2 * (cfg.T * cfg.delta ** 2 + var) * (1 + 1e-12)


def test_huge_delta_means_no_inner_steps():
    game = quadratic_game((2, 3), seed=2)
    cfg = StepConfig(eta=0.5 / max(game.L), L=max(game.L), w=2, delta=1e6, T=8)
    run = run_simultaneous(game, "alg1", cfg)
    for tr in run.traces:
        assert tr.tau_total == 0
        assert np.all(tr.x == tr.x[0])


def test_simultaneous_runs_are_reproducible():
    game = game_from_dict({"kind": "quadratic", "dims": [2, 2], "seed": 3})
    cfg = StepConfig(eta=0.5 / max(game.L), L=max(game.L), w=3, delta=0.1, T=12)
    a, b = run_simultaneous(game, "alg1", cfg), run_simultaneous(game, "alg1", cfg)
    for ta, tb in zip(a.traces, b.traces):
        np.testing.assert_array_equal(ta.x, tb.x)


def test_player_errors_name_the_player():
    game = quadratic_game((2, 2), seed=0)
    cfg = StepConfig(eta=0.5 / max(game.L), L=max(game.L), w=2, delta=1e-6, T=4, max_inner=1)
    with pytest.raises(PlayerError) as info:
        run_simultaneous(game, "alg1", cfg)
    assert info.value.player in (0, 1)


def test_calibrated_run_fires_inside_the_horizon():
    game = quadratic_game((3, 3), seed=1)
    res = calibrated_equilibrium_run(game, epsilon=0.05, delta=0.1)
    w = res.run.cfg.w
    assert res.window.w <= w and res.run.cfg.T == w * w
    assert res.first_round is not None and w <= res.first_round <= w * w
    assert first_equilibrium_round(res.run, game, res.run.cfg.eta, w, 0.05) == res.first_round
