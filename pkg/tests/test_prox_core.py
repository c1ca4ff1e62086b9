import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tsprox.errors import ParameterError, ShapeError
from tsprox.prox_core import (L1, BoxIndicator, SimplexIndicator, SimplexPlusL1, Zero, all_kinds_sample,
                              project_simplex, prox_grad_map, prox_residual, regularizer_from_dict,
                              residual_norm, residual_norm_sq, soft_threshold)


def simplex_by_bisection(v, iters=200):
    """Reference projection: bisect on the shift theta with sum(max(v - theta, 0)) = 1."""
    v = np.asarray(v, float)
    lo, hi = v.min() - 1.0, v.max()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.maximum(v - mid, 0).sum() > 1:
            lo = mid
        else:
            hi = mid
    return np.maximum(v - 0.5 * (lo + hi), 0)


@pytest.mark.parametrize("v, expected", [
    ((0.9, 0.9, 0.2), (0.5, 0.5, 0.0)),
    ((0.2, 0.3, 0.5), (0.2, 0.3, 0.5)),
    ((2.0, 0.0), (1.0, 0.0)),
    ((-1.0, -1.0), (0.5, 0.5)),
    ((5.0,), (1.0,)),
])
def test_simplex_projection_known_values(v, expected):
    np.testing.assert_allclose(project_simplex(v), expected, atol=1e-15)


def test_simplex_projection_matches_bisection_reference():
    rng = np.random.default_rng(0)
    for _ in range(300):
        n = int(rng.integers(1, 12))
        v = rng.normal(scale=rng.uniform(0.1, 5), size=n)
        p = project_simplex(v)
        np.testing.assert_allclose(p, simplex_by_bisection(v), atol=1e-12)
        assert p.min() >= 0 and abs(p.sum() - 1) <= 1e-12


def test_simplex_projection_rejects_bad_input():
    with pytest.raises(ShapeError):
        project_simplex([])
    with pytest.raises(ParameterError):
        project_simplex([np.nan, 1.0])


def test_soft_threshold_and_l1_prox():
    np.testing.assert_array_equal(soft_threshold(np.array([3.0, -0.5, -2.0]), 1.0), [2.0, 0.0, -1.0])
    g = L1(2.0)
    # prox of eta * mu * |.| shrinks by eta * mu
    np.testing.assert_allclose(g.prox(np.array([1.5, -0.2]), 0.5), [0.5, 0.0])
    assert g.value([1.0, -2.0]) == 6.0


def test_box_prox_is_clipping():
    g = BoxIndicator.uniform(3, -1.0, 2.0)
    np.testing.assert_array_equal(g.prox(np.array([-3.0, 0.5, 9.0]), 0.1), [-1.0, 0.5, 2.0])
    assert g.value([0, 0, 0]) == 0 and g.value([3, 0, 0]) == math.inf


def test_zero_prox_is_identity():
    x = np.array([0.3, -4.0])
    np.testing.assert_array_equal(Zero().prox(x, 7.0), x)


def test_simplex_plus_l1_ignores_mu_on_blocks():
    v = np.array([0.9, 0.9, 0.2, 3.0, -1.0, 0.7])
    blocks = ((0, 3), (3, 6))
    base = SimplexIndicator(blocks).prox(v, 0.3)
    for mu in (0.0, 0.5, 10.0):
        np.testing.assert_array_equal(SimplexPlusL1(blocks, mu).prox(v, 0.3), base)


def test_simplex_plus_l1_shrinks_free_coordinates():
    g = SimplexPlusL1(((0, 2),), 1.0)
    out = g.prox(np.array([0.7, 0.7, 3.0, -0.2]), 0.5)
    np.testing.assert_allclose(out, [0.5, 0.5, 2.5, 0.0])


def test_residual_of_stationary_point_is_zero():
    # minimiser of <d, x> on the box sits at the corner opposite to d
    g = BoxIndicator.uniform(2, -1, 1)
    d = np.array([1.0, -2.0])
    assert residual_norm_sq(g, np.array([-1.0, 1.0]), d, 0.3) == 0.0
    assert residual_norm(g, np.zeros(2), d, 0.1) > 0


def test_prox_grad_map_and_residual_relation():
    g = L1(0.3)
    x, d, eta = np.array([0.4, -1.0]), np.array([0.2, 0.5]), 0.7
    T = prox_grad_map(g, x, d, eta)
    np.testing.assert_allclose(prox_residual(g, x, d, eta), (x - T) / eta)


def test_residual_with_zero_regulariser_is_the_direction():
    d = np.array([0.25, -3.0])
    np.testing.assert_allclose(prox_residual(Zero(), np.ones(2), d, 0.4), d)


@pytest.mark.parametrize("eta", [0.0, -1.0])
def test_nonpositive_step_rejected(eta):
    with pytest.raises(ParameterError):
        prox_grad_map(Zero(), [1.0], [1.0], eta)


def test_shape_mismatch_rejected():
    with pytest.raises(ShapeError):
        prox_residual(Zero(), [1.0, 2.0], [1.0], 0.1)


def test_regularizer_round_trip():
    rng = np.random.default_rng(4)
    for g in all_kinds_sample(5, rng):
        h = regularizer_from_dict(g.to_dict(), 5)
        v = rng.normal(size=5)
        np.testing.assert_array_equal(g.prox(v, 0.3), h.prox(v, 0.3))


# ---------------------------------------------------------------------------
# property tests

vec = arrays(np.float64, 6, elements=st.floats(-10, 10, allow_nan=False, width=64))
step = st.floats(1e-3, 5.0)
kind_index = st.integers(0, 4)


def _kind(i, seed=123):
    return all_kinds_sample(6, np.random.default_rng(seed))[i]


def _domain_point(g, rng):
    z = rng.normal(size=6)
    return g.prox(z, 1.0)


@settings(max_examples=200, deadline=None)
@given(kind_index, vec, vec, step)
def test_prox_is_nonexpansive(i, a, b, eta):
    g = _kind(i)
    lhs = np.linalg.norm(g.prox(a, eta) - g.prox(b, eta))
    assert lhs <= np.linalg.norm(a - b) * (1 + 1e-12) + 1e-12


@settings(max_examples=200, deadline=None)
@given(kind_index, vec, vec, vec, step)
def test_residual_triangle_inequality(i, x, d1, d2, eta):
    g = _kind(i)
    x = g.prox(x, 1.0)
    lhs = residual_norm(g, x, d1 + d2, eta)
    rhs = residual_norm(g, x, d1, eta) + np.linalg.norm(d2)
    assert lhs <= rhs * (1 + 1e-9) + 1e-9


@settings(max_examples=200, deadline=None)
@given(kind_index, vec, step, st.integers(0, 2 ** 32 - 1))
def test_prox_optimality_inequality(i, v, eta, seed):
    g = _kind(i)
    p = g.prox(v, eta)
    rng = np.random.default_rng(seed)
    for _ in range(5):
        z = _domain_point(g, rng)
        # eta g(z) >= eta g(p) + <v - p, z - p>
        lhs = eta * g.value(z)
        rhs = eta * g.value(p) + (v - p) @ (z - p)
        assert lhs >= rhs - 1e-9 * (1 + abs(rhs))
