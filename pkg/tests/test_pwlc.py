from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from convexswitch.pwlc import (
    ConvexHandle, DimensionError, Grid, PwlcFunction, add, argmax_row, compose_linear, envelope,
    evaluate, is_grid_consistent, max_of, row_rearrange,
)


def _grid(xs) -> Grid:
    xs = np.asarray(xs, dtype=float)
    return Grid(np.column_stack([np.ones(len(xs)), xs]))


def _exp_handle() -> ConvexHandle:
    def value(z):
        return math.exp(z[1])

    def grad(z):
        return np.array([0.0, math.exp(z[1])])

    return ConvexHandle(value, grad)


# -- examples ------------------------------------------------------------------------


def test_evaluate_examples():
    assert evaluate([[0, 1]], [1, 3]) == 3
    F = PwlcFunction([[0, 1], [2, 0]])
    assert evaluate(F, [1, 3]) == 3
    assert evaluate(F, [1, 1]) == 2
    assert F([1, 1]) == 2
    assert evaluate([[0, 0]], [1, 7.5]) == 0


def test_evaluate_dimension_mismatch():
    with pytest.raises(DimensionError):
        evaluate([[0, 1]], [1, 2, 3])


def test_argmax_row_ties_go_to_lowest_index():
    F = [[0, 1], [2, 0]]
    assert argmax_row(F, [1, 2]) == 0
    assert argmax_row(F, [1, 5]) == 0
    assert argmax_row(F, [1, 0]) == 1
    assert argmax_row([[3, -1]], [1, 9]) == 0


def test_row_rearrange_examples():
    G = _grid([0, 2])
    out = row_rearrange([[0, 1], [1, 0]], G)
    np.testing.assert_array_equal(out.coeffs, [[1, 0], [0, 1]])
    single = row_rearrange([[0.5, 2.0]], _grid([0, 1, 2]))
    np.testing.assert_array_equal(single.coeffs, [[0.5, 2.0]] * 3)


def test_envelope_of_exp_on_two_points():
    out = envelope(_exp_handle(), _grid([0, 1]))
    np.testing.assert_allclose(out.coeffs, [[1, 1], [0, math.e]], rtol=0, atol=1e-15)


def test_envelope_of_affine_and_of_max_of_affine():
    a = np.array([0.3, -1.2])
    h = ConvexHandle(lambda z: float(a @ z), lambda z: a)
    out = envelope(h, _grid([-1, 0, 3]))
    np.testing.assert_allclose(out.coeffs, [a] * 3)

    A = np.array([[0.0, -1.0], [1.0, 2.0]])
    h2 = ConvexHandle(lambda z: float(np.max(A @ z)), lambda z: A[np.argmax(A @ z)])
    out2 = envelope(h2, _grid([-3, 2]))
    np.testing.assert_allclose(out2.coeffs, A)


def test_max_of_examples():
    G = _grid([0, 5])
    out = max_of([[0, 1]], [[2, 0]], G)
    np.testing.assert_array_equal(out.coeffs, [[2, 0], [0, 1]])
    F = [[0, 1], [1, -1]]
    np.testing.assert_array_equal(max_of(F, F, G).coeffs, row_rearrange(F, G).coeffs)


def test_add_examples():
    G = _grid([0, 1, 2])
    F = [[0, 1], [1, -1]]
    np.testing.assert_array_equal(add(F, [[0, 0]], G).coeffs, row_rearrange(F, G).coeffs)
    np.testing.assert_array_equal(add([[1, 2]], [[3, 4]], G).coeffs, [[4, 6]] * 3)


def test_compose_linear_examples():
    G = _grid([0, 1, 2])
    F = [[0, 1], [1, -1]]
    np.testing.assert_array_equal(compose_linear(F, np.eye(2), G).coeffs, row_rearrange(F, G).coeffs)
    W = np.diag([1.0, 2.0])
    np.testing.assert_array_equal(compose_linear([[0.5, 3.0]], W, G).coeffs, [[0.5, 6.0]] * 3)
    with pytest.raises(DimensionError):
        compose_linear(F, np.eye(3), G)


def test_grid_rejects_bad_points():
    with pytest.raises(ValueError):
        Grid([[1.0, 0.0], [1.0, 0.0]])
    with pytest.raises(ValueError):
        Grid([[0.5, 0.0]])


# -- properties ----------------------------------------------------------------------

# BLAS may round the same row-vector product differently inside differently shaped
# products, so "exact" identities are compared at a few ulps
ULP = 1e-12


def _close(a, b):
    np.testing.assert_allclose(a, b, rtol=ULP, atol=ULP)


coef = st.floats(-10, 10, allow_nan=False)
matrices = st.integers(1, 6).flatmap(lambda r: arrays(float, (r, 3), elements=coef))
grids = st.integers(1, 6).flatmap(
    lambda m: arrays(float, (m, 2), elements=st.floats(-5, 5), unique=True)
).map(lambda x: Grid(np.column_stack([np.ones(len(x)), x])))
probes = arrays(float, (20, 2), elements=st.floats(-8, 8)).map(
    lambda x: np.column_stack([np.ones(len(x)), x])
)


@pytest.mark.property
@given(matrices, grids, probes)
def test_rearrangement_minorizes_and_is_exact_on_grid(F, G, Z):
    R = row_rearrange(F, G)
    full = evaluate(F, Z)
    assert np.all(evaluate(R, Z) <= full + ULP * np.maximum(1.0, np.abs(full)))
    _close(evaluate(R, G.points), evaluate(F, G.points))
    assert is_grid_consistent(R, G)


@pytest.mark.property
@given(matrices, grids)
def test_rearrangement_is_idempotent(F, G):
    R = row_rearrange(F, G)
    np.testing.assert_array_equal(row_rearrange(R, G).coeffs, R.coeffs)


@given(matrices, matrices, grids)
def test_grid_point_identities(F1, F2, G):
    g = G.points
    _close(evaluate(max_of(F1, F2, G), g), np.maximum(evaluate(F1, g), evaluate(F2, g)))
    _close(evaluate(add(F1, F2, G), g), evaluate(F1, g) + evaluate(F2, g))
    _close(evaluate(max_of(F1, F2, G), g), evaluate(max_of(F2, F1, G), g))


@given(matrices, grids, arrays(float, (3, 3), elements=st.floats(-2, 2)))
def test_compose_linear_grid_identity(F, G, W):
    W[0] = [1.0, 0.0, 0.0]
    got = evaluate(compose_linear(F, W, G), G.points)
    want = evaluate(F, G.points @ W.T)
    _close(got, want)


def _quadratic_handle(c):
    c = np.asarray(c, dtype=float)

    def value(z):
        x = np.atleast_2d(z)[:, 1:]
        return np.exp(0.3 * x[:, 0]) + (x ** 2) @ c

    def grad(z):
        z = np.atleast_2d(z)
        g = np.zeros_like(z)
        g[:, 1] = 0.3 * np.exp(0.3 * z[:, 1])
        g[:, 1:] += 2 * c * z[:, 1:]
        return g

    return ConvexHandle(value, grad, vectorized=True)


@pytest.mark.property
@given(arrays(float, 2, elements=st.floats(0, 3)), st.integers(1, 40), st.integers(0, 2**31 - 1))
def test_envelope_exact_on_grid_and_minorant_off_grid(c, m, seed):
    rng = np.random.default_rng(seed)
    h = _quadratic_handle(c)
    pts = np.column_stack([np.ones(m), rng.uniform(-3, 3, (m, 2))])
    G = Grid(pts)
    E = envelope(h, G)
    on = h.values(G.points)
    np.testing.assert_allclose(evaluate(E, G.points), on, rtol=1e-12, atol=1e-12)
    Z = np.column_stack([np.ones(1000), rng.uniform(-6, 6, (1000, 2))])
    hz = h.values(Z)
    assert np.all(evaluate(E, Z) <= hz + 1e-12 * np.maximum(1.0, np.abs(hz)))


@given(st.integers(2, 30), st.integers(0, 2**31 - 1))
def test_envelope_grows_under_refinement(m, seed):
    rng = np.random.default_rng(seed)
    h = _quadratic_handle([0.5, 1.0])
    fine = np.column_stack([np.ones(2 * m), rng.uniform(-3, 3, (2 * m, 2))])
    Gf, Gc = Grid(fine), Grid(fine[:m])
    Z = np.column_stack([np.ones(500), rng.uniform(-6, 6, (500, 2))])
    assert np.all(evaluate(envelope(h, Gc), Z) <= evaluate(envelope(h, Gf), Z) + 1e-12)


@given(st.integers(0, 2**31 - 1))
def test_supplied_subgradients_support_the_function(seed):
    rng = np.random.default_rng(seed)
    h = _quadratic_handle([0.2, 0.7])
    Z = np.column_stack([np.ones(50), rng.uniform(-4, 4, (50, 2))])
    Y = np.column_stack([np.ones(50), rng.uniform(-4, 4, (50, 2))])
    lin = h.values(Z) + np.einsum("ij,ij->i", h.subgradients(Z)[:, 1:], (Y - Z)[:, 1:])
    assert np.all(h.values(Y) >= lin - 1e-10)
