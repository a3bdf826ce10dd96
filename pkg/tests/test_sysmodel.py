"""System, cost, value/policy, and aspiration-schedule model types."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paretoctrl.polyalg import Polynomial, monomial_basis
from paretoctrl.sysmodel import (
    AspirationSchedule,
    ControlAffineSystem,
    CostSpec,
    ModelError,
    Policy,
    Region,
    ValueFunction,
    check_positive_definite,
    degree_bound,
    extract_policy,
    hamiltonian,
    lyap_deficit,
    optimal_policy_vector,
    pareto_dominates,
)


def scalar_system():
    x = Polynomial.variable(1, 0)
    return ControlAffineSystem([x], [[Polynomial.constant(1, 1.0)]], name="scalar")


def scalar_cost():
    x = Polynomial.variable(1, 0)
    return CostSpec(x**2, 10.0 * x**2, np.array([[1.0]]), np.array([[1.0]]))


class TestRegion:
    def test_basic_geometry(self):
        r = Region([(-1.0, 1.0), (-2.0, 2.0)])
        assert r.n == 2
        assert r.corner() == pytest.approx([1.0, 2.0])
        assert r.canonical_state() == pytest.approx([0.5, 1.0])
        ext = r.axis_extremes()
        assert ext.shape == (4, 2)
        assert r.contains(np.array([0.5, -1.5]))
        assert not r.contains(np.array([1.5, 0.0]))

    def test_scaled(self):
        r = Region([(-1.0, 1.0)]).scaled(2.0)
        assert r.contains(np.array([1.9]))

    def test_sample_grid_deterministic(self):
        r = Region([(-1.0, 1.0), (-0.5, 1.0)])
        a = r.sample_grid(64, seed=3)
        b = r.sample_grid(64, seed=3)
        assert np.array_equal(a, b)
        assert all(r.contains(x) for x in a)

    def test_degenerate_rejected(self):
        with pytest.raises(ModelError):
            Region([(1.0, -1.0)])


class TestSystemAndCost:
    def test_eval_and_degrees(self):
        sys = scalar_system()
        assert sys.f_eval(np.array([2.0])) == pytest.approx([2.0])
        assert sys.g_eval(np.array([2.0])) == pytest.approx(np.array([[1.0]]))
        assert sys.deg_f() == 1 and sys.deg_g() == 0

    def test_cost_validation(self):
        x = Polynomial.variable(1, 0)
        with pytest.raises(ModelError):
            CostSpec(x**2, x**2, np.array([[0.0]]), np.array([[1.0]]))
        with pytest.raises(ModelError):
            CostSpec(x**2 + 1.0, x**2, np.array([[1.0]]),
                     np.array([[1.0]])).validate_state_penalties(Region([(-1, 1)]))

    def test_running_cost(self):
        cost = scalar_cost()
        assert cost.running_cost(1, np.array([2.0]), np.array([3.0])) == pytest.approx(4.0 + 9.0)
        assert cost.running_cost(2, np.array([2.0]), np.array([0.0])) == pytest.approx(40.0)

    def test_check_positive_definite(self):
        r = Region([(-1.0, 1.0)])
        x = Polynomial.variable(1, 0)
        assert check_positive_definite(x**2, r)
        assert not check_positive_definite(-(x**2), r)


class TestValueAndPolicy:
    def test_value_function(self):
        b = monomial_basis(1, 2, 2)
        V = ValueFunction(b, np.array([2.5]))
        assert V.eval([2.0]) == pytest.approx(10.0)
        assert V.gradient()[0] == 5.0 * Polynomial.variable(1, 0)

    def test_policy_linear_is_verbatim_gain(self):
        # the stored gain is applied as-is: u = K x
        pol = Policy.linear(np.array([[-2.0]]), 1)
        assert pol.eval(np.array([3.0])) == pytest.approx([-6.0])

    def test_policy_zero(self):
        b = monomial_basis(2, 1, 2)
        pol = Policy.zero(b, 1)
        assert pol.eval(np.array([1.0, -1.0])) == pytest.approx([0.0])

    def test_as_polyvector(self):
        pol = Policy.linear(np.array([[1.0, -1.0]]), 2)
        p = pol.as_polyvector()[0]
        assert p.eval([2.0, 3.0]) == pytest.approx(-1.0)


class TestHamiltonian:
    def test_riccati_stationarity(self):
        # dx/dt = x + u, Q = x^2, R = 1: V = (1+sqrt(2)) x^2 solves the HJB
        # equation exactly with u = -(1+sqrt(2)) x... via u = -0.5 R^-1 g' dV
        sys = scalar_system()
        x = Polynomial.variable(1, 0)
        p = 1.0 + np.sqrt(2.0)
        V = p * x**2
        u = optimal_policy_vector(sys, np.array([[1.0]]), V)
        # u = -p x
        assert u[0].coefficient((1,)) == pytest.approx(-p)
        H = hamiltonian(sys, x**2, np.array([[1.0]]), V, u)
        assert H.max_abs_coeff() <= 1e-12

    def test_lyap_deficit_is_negated_hamiltonian(self):
        sys = scalar_system()
        x = Polynomial.variable(1, 0)
        V = 2.0 * x**2
        u = [-1.0 * x]
        H = hamiltonian(sys, x**2, np.array([[1.0]]), V, u)
        L = lyap_deficit(sys, x**2, np.array([[1.0]]), V, u)
        assert (H + L).max_abs_coeff() == 0.0

    def test_extract_policy_exact_projection(self):
        sys = scalar_system()
        x = Polynomial.variable(1, 0)
        V = 3.0 * x**2
        pb = monomial_basis(1, 1, 2)
        pol = extract_policy(sys, np.array([[1.0]]), V, pb)
        assert pol.eval(np.array([2.0])) == pytest.approx([-6.0])


class TestDegreeBound:
    def test_formula(self):
        # deg f = 3, d = 2, deg g = 0, deg Q1 + deg Q2 = 4, deg delta = 3
        # -> max(3 + 3, 0 + 6, 4, 3) = 6 -> dbar = 3
        x = [Polynomial.variable(2, j) for j in range(2)]
        sys = ControlAffineSystem(
            [x[1], x[0] ** 3],
            [[Polynomial.constant(2, 0.0)], [Polynomial.constant(2, 1.0)]],
        )
        cost = CostSpec(x[0] ** 2, x[1] ** 2, np.array([[1.0]]), np.array([[1.0]]))
        delta = x[0] ** 2 * x[1]
        assert degree_bound(sys, cost, 2, delta) == 3

    def test_linear_quadratic_case(self):
        sys = scalar_system()
        cost = scalar_cost()
        x = Polynomial.variable(1, 0)
        assert degree_bound(sys, cost, 1, x**2) == 2


class TestAspirationSchedule:
    def test_geometric_shrink(self):
        x = Polynomial.variable(1, 0)
        s = AspirationSchedule(8.0 * x**2, shrink=0.5, rounds=3)
        assert s.delta(0).coefficient((2,)) == pytest.approx(8.0)
        assert s.delta(2).coefficient((2,)) == pytest.approx(2.0)

    def test_invalid_shrink(self):
        x = Polynomial.variable(1, 0)
        with pytest.raises(ModelError):
            AspirationSchedule(x**2, shrink=1.5)

    def test_positivity_check(self):
        x = Polynomial.variable(1, 0)
        with pytest.raises(ModelError):
            AspirationSchedule(-(x**2), omega=Region([(-1.0, 1.0)]))


class TestParetoDominance:
    def test_basic(self):
        assert pareto_dominates([1.0, 2.0], [1.0, 3.0])
        assert not pareto_dominates([1.0, 3.0], [1.0, 2.0])
        assert not pareto_dominates([1.0, 2.0], [1.0, 2.0])

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2, max_size=2),
        st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2, max_size=2),
    )
    def test_antisymmetric_and_irreflexive(self, a, b):
        assert not pareto_dominates(a, a)
        assert not (pareto_dominates(a, b) and pareto_dominates(b, a))
