import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from liouville_roa.moments import (DegenerateBox, DegreeTooLow, MomentVector, dirac_moments,
                                   grlex_ranks, lebesgue_moments_box, localizing_matrix,
                                   moment_matrix, riesz_functional)
from liouville_roa.poly import Polynomial, monomial_basis, parse_poly

X = ("x1",)


def unit_interval(degree):
    return lebesgue_moments_box([(-1, 1)], degree)


def test_lebesgue_interval():
    y = unit_interval(2)
    assert y[(0,)] == 2.0 and y[(1,)] == 0.0 and y[(2,)] == pytest.approx(2 / 3)


def test_lebesgue_square():
    y = lebesgue_moments_box([(-1, 1), (-1, 1)], 2)
    assert y[(2, 0)] == pytest.approx(4 / 3)


def test_lebesgue_asymmetric_box():
    y = lebesgue_moments_box([(0, 2), (1, 3)], 3)
    assert y[(1, 2)] == pytest.approx(2.0 * (27 - 1) / 3)


def test_degenerate_box():
    with pytest.raises(DegenerateBox):
        lebesgue_moments_box([(1, 1)], 2)


def test_moment_vector_length():
    y = MomentVector(("t", "x1", "x2"), 4)
    assert len(y) == math.comb(3 + 4, 4)
    with pytest.raises(ValueError):
        MomentVector(X, 2, np.zeros(4))


def test_moment_matrix_unrolls_definition():
    y = MomentVector(X, 2, np.array([3.0, 5.0, 7.0]))
    np.testing.assert_array_equal(moment_matrix(y, 1).evaluate(), [[3, 5], [5, 7]])


def test_moment_matrix_of_lebesgue():
    M = moment_matrix(unit_interval(2), 1).evaluate()
    np.testing.assert_allclose(M, [[2, 0], [0, 2 / 3]])
    assert np.linalg.eigvalsh(M).min() > 0


def test_moment_matrix_of_zero():
    y = MomentVector(("x1", "x2"), 4, np.zeros(15))
    assert not moment_matrix(y, 2).evaluate().any()


def test_moment_matrix_degree_check():
    with pytest.raises(DegreeTooLow):
        moment_matrix(unit_interval(3), 2)


def test_localizing_interval():
    g = parse_poly("1 - x1^2", X)
    L = localizing_matrix(g, unit_interval(2), 0).evaluate()
    assert L.shape == (1, 1) and L[0, 0] == pytest.approx(4 / 3)


def test_localizing_constant_is_moment_matrix():
    y = lebesgue_moments_box([(-1, 1), (0, 2)], 4)
    one = Polynomial.constant(y.variables, 1.0)
    np.testing.assert_array_equal(localizing_matrix(one, y, 2).evaluate(),
                                  moment_matrix(y, 2).evaluate())


def test_localizing_time_interval():
    y = lebesgue_moments_box([(0, 1)], 2, ("t",))
    g = parse_poly("t - t^2", ("t",))
    assert localizing_matrix(g, y, 0).evaluate()[0, 0] == pytest.approx(1 / 6)


def test_localizing_degree_check():
    with pytest.raises(DegreeTooLow):
        localizing_matrix(parse_poly("1 - x1^2", X), unit_interval(3), 1)


def test_riesz_functional():
    y = unit_interval(4)
    assert riesz_functional(y, parse_poly("x1^2", X)) == pytest.approx(2 / 3)
    assert riesz_functional(y, Polynomial.constant(X, 1.0)) == y.mass
    assert riesz_functional(y, Polynomial.zero(X)) == 0.0
    with pytest.raises(DegreeTooLow):
        riesz_functional(y, parse_poly("x1^5", X))


def test_dirac_moments():
    y = dirac_moments([0.0, 0.0], 3)
    assert y.values[0] == 1.0 and not y.values[1:].any()
    assert dirac_moments([0.5], 2)[(2,)] == 0.25


def test_dirac_moment_matrix_is_rank_one():
    y = dirac_moments([0.3, -0.7], 4)
    M = moment_matrix(y, 2).evaluate()
    E = np.array(monomial_basis(2, 2))
    v = np.prod(np.array([0.3, -0.7]) ** E, axis=1)
    np.testing.assert_allclose(M, np.outer(v, v), atol=1e-15)
    assert np.linalg.matrix_rank(M, tol=1e-10) == 1


def test_symmetric_by_construction():
    y = MomentVector(("x1", "x2"), 6)
    g = parse_poly("1 - x1^2 + 0.3*x1*x2", y.variables)
    assert localizing_matrix(g, y, 2).is_symmetric()
    assert moment_matrix(y, 3).is_symmetric()


def test_grlex_ranks_match_basis():
    E = np.array(monomial_basis(3, 5))
    np.testing.assert_array_equal(grlex_ranks(E), np.arange(len(E)))


# ---------------------------------------------------------------------------
# properties

@st.composite
def atoms(draw):
    dim = draw(st.integers(1, 3))
    count = draw(st.integers(1, 5))
    pts = draw(st.lists(st.lists(st.floats(-1, 1), min_size=dim, max_size=dim),
                        min_size=count, max_size=count))
    weights = draw(st.lists(st.floats(0.01, 1), min_size=count, max_size=count))
    k = draw(st.integers(1, 3))
    return np.array(pts), np.array(weights), k


def mixture(pts, weights, degree):
    vals = sum(w * dirac_moments(p, degree).values for p, w in zip(pts, weights))
    return MomentVector(tuple(f"x{i + 1}" for i in range(pts.shape[1])), degree, vals)


@settings(max_examples=100, deadline=None)
@given(atoms())
def test_atomic_measures_give_psd_matrices(data):
    pts, weights, k = data
    dim = pts.shape[1]
    ctx = tuple(f"x{i + 1}" for i in range(dim))
    y = mixture(pts, weights, 2 * k + 2)
    M = moment_matrix(y, k).evaluate()
    assert np.linalg.eigvalsh(M).min() >= -1e-10 * max(1.0, np.abs(M).max())
    # dim - |x|^2 is nonnegative on the cube [-1, 1]^dim
    g = Polynomial.constant(ctx, float(dim))
    for v in ctx:
        g = g - Polynomial.variable(ctx, v) ** 2
    L = localizing_matrix(g, y, k).evaluate()
    assert np.linalg.eigvalsh(L).min() >= -1e-10 * max(1.0, np.abs(L).max())


@settings(max_examples=50, deadline=None)
@given(atoms(), st.floats(-2, 2), st.floats(-2, 2))
def test_riesz_functional_is_bilinear(data, a, b):
    pts, weights, _ = data
    ctx = tuple(f"x{i + 1}" for i in range(pts.shape[1]))
    y1 = mixture(pts, weights, 3)
    y2 = lebesgue_moments_box([(-1, 1)] * len(ctx), 3, ctx)
    p = parse_poly(" + ".join(f"{i + 1}*{v}^{i + 1}" for i, v in enumerate(ctx)), ctx)
    q = Polynomial.constant(ctx, 0.5) - Polynomial.variable(ctx, ctx[0])
    mixed = MomentVector(ctx, 3, a * y1.values + b * y2.values)
    assert riesz_functional(mixed, p) == pytest.approx(
        a * riesz_functional(y1, p) + b * riesz_functional(y2, p), abs=1e-12)
    assert riesz_functional(y1, p.scale(a) + q.scale(b)) == pytest.approx(
        a * riesz_functional(y1, p) + b * riesz_functional(y1, q), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(0, 3))
def test_moment_matrix_nests(dim, k):
    y = lebesgue_moments_box([(-1, 0.5)] * dim, 2 * k + 2)
    small = moment_matrix(y, k).evaluate()
    big = moment_matrix(y, k + 1).evaluate()
    s = small.shape[0]
    np.testing.assert_array_equal(big[:s, :s], small)
