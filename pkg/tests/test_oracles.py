import numpy as np
import pytest

from tsprox.errors import ParameterError, ProtocolError
from tsprox.oracles import (TAG_INNER, TAG_NEW, NoiseModel, StochasticOracle, keyed_rng, sample_grad,
                            scaled_oracle)
from tsprox.streams import QuadraticDriftStream


@pytest.fixture
def stream():
    return QuadraticDriftStream(4, 20, seed=3)


def test_noise_model_validation():
    with pytest.raises(ParameterError):
        NoiseModel("cauchy", 1.0)
    with pytest.raises(ParameterError):
        NoiseModel.gaussian(-0.1)
    assert NoiseModel("exact", 3.0).sigma == 0.0


def test_bounded_flags():
    assert NoiseModel.ball(1).bounded and NoiseModel.exact().bounded
    assert not NoiseModel.gaussian(1).bounded
    assert NoiseModel.gaussian(0).silent


@pytest.mark.parametrize("noise", [NoiseModel.gaussian(0.7), NoiseModel.ball(0.7)])
def test_noise_is_centred_with_bounded_second_moment(noise):
    rng = np.random.default_rng(0)
    z = noise.sample(rng, 5, size=20000)
    se = z.std(axis=0) / np.sqrt(len(z))
    assert np.all(np.abs(z.mean(axis=0)) <= 4 * se)
    assert np.mean(np.sum(z ** 2, axis=1)) <= 1.05 * noise.sigma ** 2


def test_ball_noise_never_leaves_the_ball():
    z = NoiseModel.ball(0.3).sample(np.random.default_rng(1), 7, size=50000)
    assert np.linalg.norm(z, axis=1).max() <= 0.3


def test_ball_second_moment_formula():
    # uniform in the n-ball: E||z||^2 = sigma^2 n / (n + 2)
    n, s = 3, 2.0
    z = NoiseModel.ball(s).sample(np.random.default_rng(2), n, size=200000)
    assert abs(np.mean(np.sum(z ** 2, axis=1)) - s * s * n / (n + 2)) < 0.02


def test_scaled_oracle_divides_sigma():
    assert scaled_oracle(NoiseModel.ball(0.6), 3).sigma == pytest.approx(0.2)
    assert scaled_oracle(NoiseModel.exact(), 3).kind == "exact"
    with pytest.raises(ParameterError):
        scaled_oracle(NoiseModel.ball(1), 0)


def test_keyed_rng_is_a_pure_function_of_its_key():
    a = keyed_rng(5, 0, 3, 1, 2, TAG_INNER).standard_normal(4)
    b = keyed_rng(5, 0, 3, 1, 2, TAG_INNER).standard_normal(4)
    c = keyed_rng(5, 1, 3, 1, 2, TAG_INNER).standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_oracle_window_reach(stream):
    o = StochasticOracle(NoiseModel.ball(0.1), seed=1)
    x = np.zeros(4)
    o.enter_round(5, 2)
    for i in (3, 4, 5):
        o.sample_grad(stream, i, x)
    for i in (2, 6):
        with pytest.raises(ProtocolError):
            o.sample_grad(stream, i, x)
    assert o.calls == 3


def test_oracle_rounds_do_not_go_back(stream):
    o = StochasticOracle(NoiseModel.exact())
    o.enter_round(4, 1)
    with pytest.raises(ProtocolError):
        o.enter_round(3, 1)


def test_queries_before_the_horizon_are_zero_but_counted(stream):
    o = StochasticOracle(NoiseModel.ball(1.0), seed=0)
    o.enter_round(1, 3)
    v = o.sample_grad(stream, -1, np.ones(4)).vector
    np.testing.assert_array_equal(v, 0)
    assert o.calls == 1


def test_exact_oracle_returns_the_gradient(stream):
    o = StochasticOracle(NoiseModel.exact())
    o.enter_round(2, 1)
    x = np.arange(4.0)
    np.testing.assert_array_equal(o.sample_grad(stream, 2, x).vector, stream.grad(2, x))


def test_oracle_samples_are_reproducible(stream):
    x = np.ones(4) * 0.2
    out = []
    for _ in range(2):
        o = StochasticOracle(NoiseModel.gaussian(0.5), seed=9, player=1)
        o.enter_round(3, 2)
        out.append(o.sample_grad(stream, 2, x, k=4, tag=TAG_NEW).vector)
    np.testing.assert_array_equal(*out)


def test_stateless_sampler(stream):
    x = np.zeros(4)
    g = sample_grad(stream, 0, x, NoiseModel.exact(), np.random.default_rng(0))
    np.testing.assert_array_equal(g.vector, 0)
    assert g.oracle_calls_consumed == 1


@pytest.mark.parametrize("noise", [NoiseModel.gaussian(0.4), NoiseModel.ball(0.4)])
def test_oracle_noise_equals_the_keyed_reference_draw(stream, noise):
    o = StochasticOracle(noise, seed=2 ** 63 + 5, player=3)
    x = np.full(4, 0.1)
    for t, k, i, tag in [(3, 0, 3, TAG_NEW), (3, 2, 2, TAG_INNER), (9, 7, 5, TAG_INNER), (9, 1, 9, TAG_NEW)]:
        o.enter_round(t, 4)
        got = o.sample_grad(stream, i, x, k=k, tag=tag).vector - stream.grad(i, x)
        ref = noise.sample(keyed_rng(2 ** 63 + 5, 3, t, k, i, tag), 4)
        np.testing.assert_allclose(got, ref, rtol=0, atol=1e-15)
