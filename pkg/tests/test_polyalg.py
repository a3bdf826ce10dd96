"""Polynomial arithmetic, monomial bases, and box moments."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paretoctrl.polyalg import (
    DegenerateBoxError,
    DimensionMismatchError,
    InvalidDegreeBoundsError,
    MonomialBasis,
    Polynomial,
    basis_count,
    box_moment_integral,
    gram_monomials,
    monomial_basis,
    poly_dot,
)

RNG = np.random.default_rng(20260826)


def random_poly(n, dmax, rng, nterms=6):
    p = Polynomial.zero(n)
    for _ in range(nterms):
        expo = tuple(int(v) for v in rng.integers(0, dmax + 1, size=n))
        if sum(expo) > dmax:
            continue
        p = p + Polynomial.monomial(expo, float(rng.normal()))
    return p


class TestPolynomialArithmetic:
    def test_constructors(self):
        x = Polynomial.variable(2, 0)
        assert x.eval([3.0, 5.0]) == 3.0
        assert Polynomial.constant(2, 4.0).eval([1.0, 1.0]) == 4.0
        assert Polynomial.zero(3).is_zero()
        assert Polynomial.monomial((1, 2), 2.0).eval([2.0, 3.0]) == 2.0 * 2 * 9

    def test_degrees(self):
        x, y = (Polynomial.variable(2, j) for j in range(2))
        p = x**3 + y + 1.0
        assert p.degree() == 3
        assert p.min_degree() == 0
        assert (x * y).min_degree() == 2
        assert Polynomial.zero(2).degree() == 0

    def test_mul_against_pointwise_eval(self):
        # frozen random product oracle: (p*q)(x) == p(x)*q(x)
        for _ in range(20):
            p = random_poly(3, 3, RNG)
            q = random_poly(3, 3, RNG)
            x = RNG.normal(size=3)
            assert (p * q).eval(x) == pytest.approx(p.eval(x) * q.eval(x), rel=1e-12, abs=1e-12)

    def test_pow(self):
        x = Polynomial.variable(1, 0)
        p = (1.0 + x) ** 4
        assert p.coefficient((2,)) == pytest.approx(6.0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            Polynomial.variable(2, 0) + Polynomial.variable(3, 0)

    def test_diff_and_gradient(self):
        x, y = (Polynomial.variable(2, j) for j in range(2))
        p = x**2 * y + 3.0 * y
        assert p.diff(0) == 2.0 * x * y
        assert p.diff(1) == x**2 + Polynomial.constant(2, 3.0)
        g = p.gradient()
        assert g[0] == p.diff(0) and g[1] == p.diff(1)

    def test_compile_matches_eval(self):
        p = random_poly(3, 4, RNG)
        f = p.compile()
        X = RNG.normal(size=(10, 3))
        vals = f(X)
        for xi, vi in zip(X, vals):
            assert vi == pytest.approx(p.eval(xi), rel=1e-12, abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 3), st.integers(0, 3),
           st.floats(-2, 2, allow_nan=False), st.floats(-2, 2, allow_nan=False))
    def test_product_rule(self, a, b, c1, c2):
        # d/dx (p*q) = p'q + pq'
        x = Polynomial.variable(1, 0)
        p = c1 * x**a + 1.0
        q = c2 * x**b - x
        lhs = (p * q).diff(0)
        rhs = p.diff(0) * q + p * q.diff(0)
        assert (lhs - rhs).max_abs_coeff() <= 1e-12


class TestMonomialBasis:
    def test_counts(self):
        # |m(6, 2, 4)| = C(10,4) - 7 = 203
        assert len(monomial_basis(6, 2, 4)) == 203
        assert basis_count(6, 2, 4) == 203
        # |m(1, 1, 2)| = {x, x^2}
        assert [e for e in monomial_basis(1, 1, 2)] == [(1,), (2,)]

    def test_graded_order_and_index(self):
        b = monomial_basis(2, 1, 2)
        assert list(b) == [(1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
        for k, e in enumerate(b):
            assert b.index(e) == k
        assert (1, 1) in b and (3, 0) not in b

    def test_invalid_bounds(self):
        with pytest.raises(InvalidDegreeBoundsError):
            monomial_basis(2, 3, 2)

    def test_eval_vector_batch(self):
        b = monomial_basis(2, 1, 3)
        x = np.array([0.7, -1.3])
        v = b.eval_vector(x)
        for k, e in enumerate(b):
            assert v[k] == pytest.approx(x[0] ** e[0] * x[1] ** e[1])
        X = RNG.normal(size=(5, 2))
        V = b.eval_batch(X)
        assert V.shape == (5, len(b))
        assert V[2] == pytest.approx(b.eval_vector(X[2]))

    def test_project_roundtrip(self):
        b = monomial_basis(2, 1, 4)
        c = RNG.normal(size=len(b))
        p = b.to_polynomial(c)
        assert b.project(p) == pytest.approx(c)

    def test_gradient_polys(self):
        b = monomial_basis(2, 2, 2)
        g = b.gradient_polys()
        k = b.index((1, 1))
        assert g[k][0] == Polynomial.variable(2, 1)

    def test_restricted(self):
        b = monomial_basis(2, 2, 4)
        even = b.restricted(lambda e: all(v % 2 == 0 for v in e))
        assert all(all(v % 2 == 0 for v in e) for e in even.entries)
        assert not even.complete

    def test_gram_monomials_allows_constant(self):
        g = gram_monomials(2, 0, 2)
        assert (0, 0) in g.entries
        assert len(g) == 1 + len(monomial_basis(2, 1, 2))


class TestBoxMoments:
    def test_exact_square(self):
        # int_{[0,2]^2} x1 x2 = (2^2/2)^2 = 4
        b = MonomialBasis(2, 2, 2, [(1, 1)], complete=False)
        w = box_moment_integral(b, [(0.0, 2.0), (0.0, 2.0)])
        assert w[0] == pytest.approx(4.0)

    def test_against_monte_carlo(self):
        b = monomial_basis(2, 1, 4)
        box = [(-1.0, 2.0), (0.5, 1.5)]
        w = box_moment_integral(b, box)
        rng = np.random.default_rng(7)
        X = np.column_stack([rng.uniform(lo, hi, size=400000) for lo, hi in box])
        vol = np.prod([hi - lo for lo, hi in box])
        mc = b.eval_batch(X).mean(axis=0) * vol
        assert w == pytest.approx(mc, rel=0.02, abs=0.02)

    def test_odd_moments_vanish_on_symmetric_box(self):
        b = monomial_basis(1, 1, 3)
        w = box_moment_integral(b, [(-1.0, 1.0)])
        assert w[b.index((1,))] == pytest.approx(0.0, abs=1e-15)
        assert w[b.index((3,))] == pytest.approx(0.0, abs=1e-15)
        assert w[b.index((2,))] == pytest.approx(2.0 / 3.0)

    def test_degenerate_box(self):
        b = monomial_basis(1, 1, 2)
        with pytest.raises(DegenerateBoxError):
            box_moment_integral(b, [(1.0, 1.0)])


def test_poly_dot():
    x, y = (Polynomial.variable(2, j) for j in range(2))
    assert poly_dot([x, y], [y, x]) == 2.0 * x * y
