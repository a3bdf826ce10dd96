"""Fixed-step integration, quadrature, and closed-loop cost evaluation."""

import io
import math

import numpy as np
import pytest

from paretoctrl.polyalg import Polynomial
from paretoctrl.simkit import (
    IntegratorConfig,
    SimulationError,
    closed_loop_cost,
    integrate_with_quadrature,
    sim_to_csv,
    simulate,
    stability_probe,
)
from paretoctrl.sysmodel import ControlAffineSystem, Policy, Region


def decay_system():
    # dx/dt = -x + u
    x = Polynomial.variable(1, 0)
    return ControlAffineSystem([-1.0 * x], [[Polynomial.constant(1, 1.0)]])


def unstable_system():
    x = Polynomial.variable(1, 0)
    return ControlAffineSystem([x], [[Polynomial.constant(1, 1.0)]])


class TestIntegratorConfig:
    def test_steps(self):
        assert IntegratorConfig(h=0.1, T=1.0).steps == 10

    def test_validation(self):
        with pytest.raises(ValueError):
            IntegratorConfig(h=0.0)
        with pytest.raises(ValueError):
            IntegratorConfig(h=1.0, T=0.5)
        with pytest.raises(ValueError):
            IntegratorConfig(method="euler")


class TestSimulate:
    def test_exponential_decay_oracle(self):
        # x(1) = e^-1 for dx/dt = -x, RK4 at h = 1e-3 is far below 1e-6 error
        sim = simulate(decay_system(), None, [1.0], IntegratorConfig(h=1e-3, T=1.0))
        assert abs(sim.final_state[0] - math.exp(-1.0)) < 1e-6
        assert not sim.diverged

    def test_rk4_order(self):
        # halving h shrinks the error by ~2^4
        sys = decay_system()
        errs = []
        for h in (0.1, 0.05):
            sim = simulate(sys, None, [1.0], IntegratorConfig(h=h, T=1.0))
            errs.append(abs(sim.final_state[0] - math.exp(-1.0)))
        assert errs[0] / errs[1] >= 12.0

    def test_policy_feedback(self):
        # u = -x on dx/dt = x + u gives a frozen state derivative of zero...
        # actually dx/dt = x - x = 0
        sys = unstable_system()
        pol = Policy.linear(np.array([[-1.0]]), 1)
        sim = simulate(sys, pol, [0.7], IntegratorConfig(h=0.01, T=1.0))
        assert sim.final_state[0] == pytest.approx(0.7)

    def test_probe_input(self):
        # constant probe e = 1 on dx/dt = -x + e settles to 1
        sim = simulate(
            decay_system(), None, [0.0], IntegratorConfig(h=0.01, T=15.0),
            probe=lambda t: np.array([1.0]),
        )
        assert sim.final_state[0] == pytest.approx(1.0, abs=1e-5)
        assert sim.e[5] == pytest.approx([1.0])

    def test_divergence_flagged(self):
        sim = simulate(unstable_system(), None, [1.0], IntegratorConfig(h=0.1, T=50.0))
        assert sim.diverged

    def test_bad_x0(self):
        with pytest.raises(SimulationError):
            simulate(decay_system(), None, [1.0, 2.0], IntegratorConfig())

    def test_deterministic(self):
        cfg = IntegratorConfig(h=0.01, T=2.0)
        a = simulate(decay_system(), None, [1.0], cfg)
        b = simulate(decay_system(), None, [1.0], cfg)
        assert np.array_equal(a.x, b.x)


class TestQuadrature:
    def test_joint_integral_oracle(self):
        # integral of x(t)^2 = e^{-2t} over [0, 1] is (1 - e^-2)/2
        sys = decay_system()
        t, X, I = integrate_with_quadrature(
            sys, lambda tk, xk: np.zeros(1), [1.0], 1e-3, 1000,
            lambda tk, xk: np.array([xk[0] ** 2]),
        )
        assert abs(I[-1, 0] - (1.0 - math.exp(-2.0)) / 2.0) < 1e-9
        assert t[-1] == pytest.approx(1.0)
        assert X.shape == (1001, 1)

    def test_quadrature_order(self):
        sys = decay_system()
        errs = []
        for h, steps in ((0.1, 10), (0.05, 20)):
            _, _, I = integrate_with_quadrature(
                sys, lambda tk, xk: np.zeros(1), [1.0], h, steps,
                lambda tk, xk: np.array([xk[0] ** 2]),
            )
            errs.append(abs(I[-1, 0] - (1.0 - math.exp(-2.0)) / 2.0))
        assert errs[0] / errs[1] >= 12.0

    def test_divergence_raises(self):
        with pytest.raises(SimulationError):
            integrate_with_quadrature(
                unstable_system(), lambda tk, xk: np.zeros(1), [1.0], 0.5, 200,
                lambda tk, xk: np.array([1.0]),
            )


class TestCosts:
    def test_lqr_cost_oracle(self):
        # dx/dt = x + u with u = -2x closes to dx/dt = -x; Q = x^2, R = 1:
        # integrand = x^2 + 4x^2 = 5 e^{-2t}; integral to infinity = 2.5
        sys = unstable_system()
        pol = Policy.linear(np.array([[-2.0]]), 1)
        sim = simulate(sys, pol, [1.0], IntegratorConfig(h=1e-3, T=20.0))
        x = Polynomial.variable(1, 0)
        J = closed_loop_cost(sim, x**2, np.array([[1.0]]))
        assert J == pytest.approx(2.5, rel=1e-5)
        assert sim.costs["truncated"] is False

    def test_truncation_flag(self):
        sim = simulate(decay_system(), None, [1.0], IntegratorConfig(h=0.01, T=1.0))
        x = Polynomial.variable(1, 0)
        closed_loop_cost(sim, x**2, np.array([[1.0]]))
        assert sim.costs["truncated"] is True

    def test_diverged_cost_raises(self):
        sim = simulate(unstable_system(), None, [1.0], IntegratorConfig(h=0.1, T=50.0))
        x = Polynomial.variable(1, 0)
        with pytest.raises(SimulationError):
            closed_loop_cost(sim, x**2, np.array([[1.0]]))


class TestStabilityProbe:
    def test_stable_policy_passes(self):
        sys = unstable_system()
        pol = Policy.linear(np.array([[-2.0]]), 1)
        ok, margin = stability_probe(sys, pol, Region([(-1.0, 1.0)]))
        assert ok and margin < 1e-3

    def test_unstable_policy_fails(self):
        ok, margin = stability_probe(unstable_system(), None, Region([(-1.0, 1.0)]))
        assert not ok


def test_sim_to_csv_schema():
    sim = simulate(decay_system(), None, [1.0], IntegratorConfig(h=0.1, T=0.5))
    buf = io.StringIO()
    sim_to_csv(sim, buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "t,x1,u1,e1"
    assert len(lines) == 1 + len(sim.t)
