import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chebdim.cheb import (
    ChebGrid, DomainError, HyperRect, Interval, bary_weights, cheb_points,
    eval_bary_1d, from_unit, interpolate_dense, to_unit, weight_vector,
)

UNIT = Interval(-1.0, 1.0)


def test_cheb_points_examples():
    np.testing.assert_array_equal(cheb_points(2, UNIT), [1.0, 0.0, -1.0])
    np.testing.assert_array_equal(cheb_points(1, Interval(0, 4)), [4.0, 0.0])
    r = math.sqrt(2) / 2
    np.testing.assert_allclose(cheb_points(4, UNIT), [1, r, 0, -r, -1], atol=1e-15)


def test_cheb_points_rejects_zero():
    with pytest.raises(ValueError):
        cheb_points(0, UNIT)


@given(st.integers(1, 40), st.floats(-50, 50), st.floats(0.01, 100))
def test_cheb_points_decreasing_with_exact_endpoints(n, lo, w):
    iv = Interval(lo, lo + w)
    x = cheb_points(n, iv)
    assert len(x) == n + 1
    assert x[0] == iv.hi and x[-1] == iv.lo
    assert np.all(np.diff(x) < 0)


def test_unit_map_examples():
    assert to_unit(0.5, Interval(0, 1)) == 0.0
    assert to_unit(1.0, Interval(0, 1)) == 1.0
    assert from_unit(-1.0, Interval(2, 6)) == 2.0


@given(st.floats(-1, 1), st.floats(-10, 10), st.floats(1e-3, 10))
def test_unit_map_round_trip(u, lo, w):
    iv = Interval(lo, lo + w)
    x = from_unit(u, iv)
    assert abs(to_unit(x, iv) - u) <= 1e-12 * max(1.0, abs(lo) / w)


def test_unit_map_clamps_and_rejects():
    iv = Interval(0.0, 1.0)
    assert to_unit(1.0 + 1e-11, iv) == 1.0
    with pytest.raises(DomainError) as exc:
        to_unit(1.01, iv)
    assert exc.value.value == pytest.approx(1.02)


def test_interval_rejects_zero_width():
    with pytest.raises(ValueError):
        Interval(1.0, 1.0)


def test_bary_weights_examples():
    np.testing.assert_array_equal(bary_weights(2), [0.5, -1, 0.5])
    np.testing.assert_array_equal(bary_weights(1), [0.5, -0.5])
    np.testing.assert_array_equal(bary_weights(3), [0.5, -1, 1, -0.5])


def test_eval_bary_examples():
    x = cheb_points(5, UNIT)
    w = bary_weights(5)
    for q in (-0.93, 0.1, 0.77):
        assert eval_bary_1d(x, x, w, q) == pytest.approx(q, abs=1e-15)
    vals = np.sin(x)
    assert eval_bary_1d(vals, x, w, x[0]) == vals[0]
    x2 = cheb_points(2, UNIT)
    assert eval_bary_1d(x2**2, x2, bary_weights(2), 0.5) == pytest.approx(0.25, abs=1e-15)


def test_weight_vector_examples():
    grid = ChebGrid(HyperRect.from_bounds([[0, 2]]), (6,))
    nodes = grid.nodes(0)
    v = weight_vector(grid, 0, nodes[3])
    np.testing.assert_array_equal(v, np.eye(6)[3])
    lin = ChebGrid(HyperRect.from_bounds([[0, 2]]), (2,))
    np.testing.assert_allclose(weight_vector(lin, 0, 1.0), [0.5, 0.5])


@given(st.floats(0, 2))
def test_weight_vector_partition_of_unity(x):
    grid = ChebGrid(HyperRect.from_bounds([[0, 2]]), (7,))
    v = weight_vector(grid, 0, x)
    assert v.sum() == pytest.approx(1.0, abs=1e-13)
    vals = np.cos(3 * grid.nodes(0))
    assert v @ vals == pytest.approx(eval_bary_1d(vals, grid.nodes(0), grid.weights(0), x), abs=1e-13)


def test_polynomial_reproduction_2d():
    rng = np.random.default_rng(3)
    grid = ChebGrid(HyperRect.from_bounds([[-2, 1], [0.5, 3]]), (4, 6))
    ca = rng.standard_normal(4)
    cb = rng.standard_normal(6)

    def p(x, y):
        return np.polyval(ca, x) * np.polyval(cb, y) + x**3 - 2 * y**5

    X, Y = np.meshgrid(grid.nodes(0), grid.nodes(1), indexing="ij")
    vals = p(X, Y)
    pts = np.column_stack([rng.uniform(-2, 1, 100), rng.uniform(0.5, 3, 100)])
    got = interpolate_dense(vals, grid, pts)
    want = p(pts[:, 0], pts[:, 1])
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12 * np.abs(want).max())


def _exp_error(n):
    x = cheb_points(n, UNIT)
    w = bary_weights(n)
    xs = np.linspace(-1, 1, 1000)
    return max(abs(eval_bary_1d(np.exp(x), x, w, q) - math.exp(q)) for q in xs)


def test_exp_convergence():
    errs = [_exp_error(n) for n in (2, 4, 8, 16, 32)]
    for a, b in zip(errs, errs[1:]):
        assert b < a or b < 1e-13
    assert _exp_error(20) < 1e-10


def test_affine_invariance():
    iv = Interval(2.0, 5.0)
    n = 9
    xs = cheb_points(n, iv)
    us = cheb_points(n, UNIT)
    f = lambda x: np.log(x) * np.sin(x)
    g = lambda u: f(from_unit(u, iv))
    w = bary_weights(n)
    for q in np.linspace(2, 5, 17):
        a = eval_bary_1d(f(xs), xs, w, q)
        b = eval_bary_1d(g(us), us, w, to_unit(q, iv))
        assert a == pytest.approx(b, rel=1e-13, abs=1e-14)


def test_grid_size_and_coords():
    grid = ChebGrid(HyperRect.from_bounds([[0, 1]] * 9), (4,) * 9)
    assert grid.size == 262_144
    c = grid.coords([[0] * 9, [3] * 9])
    np.testing.assert_array_equal(c, [[1.0] * 9, [0.0] * 9])


def test_grid_needs_two_points():
    with pytest.raises(ValueError):
        ChebGrid(HyperRect.from_bounds([[0, 1]]), (1,))
