"""Deterministic fixed-step RK4 simulation and closed-loop cost evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# step sizes: fine for data collection, coarse for cost evaluation
DATA_STEP = 1e-3
EVAL_STEP = 1e-2
# infinite-horizon costs are truncated here; the flag records whether the
# state had settled by then
SETTLE_HORIZON = 20.0
SETTLE_TOL = 1e-3
DIVERGE_LIMIT = 1e8


class SimulationError(RuntimeError):
    pass


@dataclass
class IntegratorConfig:
    h: float = EVAL_STEP
    T: float = SETTLE_HORIZON
    method: str = "rk4"

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError(f"step must be positive, got {self.h}")
        if self.T < self.h:
            raise ValueError("horizon shorter than one step")
        if self.method != "rk4":
            raise ValueError(f"unsupported method {self.method!r}")

    @property
    def steps(self) -> int:
        return int(round(self.T / self.h))


@dataclass
class SimResult:
    t: np.ndarray
    x: np.ndarray  # (steps+1, n)
    u: np.ndarray  # (steps+1, m) commanded policy output
    e: np.ndarray  # (steps+1, m) probe / disturbance input, zero when absent
    diverged: bool = False
    costs: dict = field(default_factory=dict)

    @property
    def final_state(self) -> np.ndarray:
        return self.x[-1]


def _rhs(sys, policy, probe):
    if policy is None:
        def u_of(x):
            return np.zeros(sys.m)
    else:
        u_of = policy.eval

    if probe is None:
        def e_of(t):
            return np.zeros(sys.m)
    else:
        e_of = probe

    def rhs(t, x):
        return sys.f_eval(x) + sys.g_eval(x) @ (u_of(x) + e_of(t))

    return rhs, u_of, e_of


def simulate(sys, policy, x0, cfg: IntegratorConfig, probe=None) -> SimResult:
    """Fixed-step RK4 trajectory of dx/dt = f + g(u(x) + e(t)).

    Deterministic for fixed inputs.  On divergence the partial result is
    returned with ``diverged`` set.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (sys.n,):
        raise SimulationError(f"x0 of shape {x0.shape}, expected ({sys.n},)")
    rhs, u_of, e_of = _rhs(sys, policy, probe)
    h = cfg.h
    steps = cfg.steps
    t = np.arange(steps + 1) * h
    X = np.empty((steps + 1, sys.n))
    U = np.empty((steps + 1, sys.m))
    E = np.empty((steps + 1, sys.m))
    X[0] = x0
    diverged = False
    x = x0.copy()
    for k in range(steps + 1):
        X[k] = x
        U[k] = u_of(x)
        E[k] = e_of(t[k])
        if k == steps:
            break
        tk = t[k]
        k1 = rhs(tk, x)
        k2 = rhs(tk + h / 2, x + h / 2 * k1)
        k3 = rhs(tk + h / 2, x + h / 2 * k2)
        k4 = rhs(tk + h, x + h * k3)
        x = x + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGE_LIMIT:
            X = X[: k + 2]
            U = U[: k + 2]
            E = E[: k + 2]
            t = t[: k + 2]
            X[-1] = x
            U[-1] = np.zeros(sys.m)
            E[-1] = np.zeros(sys.m)
            diverged = True
            break
    return SimResult(t=t, x=X, u=U, e=E, diverged=diverged)


def integrate_with_quadrature(sys, input_fn, x0, h: float, steps: int, integrand):
    """RK4 on the state jointly with running integrals of ``integrand(t, x)``.

    ``input_fn(t, x)`` gives the applied input.  Integrals are accumulated
    with the same fourth-order stages as the state so both discretization
    errors stay the same order.  Returns (t, X, I) with I[k] the integral
    from 0 to t[k].
    """
    x = np.asarray(x0, dtype=float).copy()
    q = np.zeros_like(np.asarray(integrand(0.0, x), dtype=float))
    t = np.arange(steps + 1) * h
    X = np.empty((steps + 1, len(x)))
    I = np.empty((steps + 1, len(q)))
    X[0] = x
    I[0] = q

    def rhs(tk, xk):
        return sys.f_eval(xk) + sys.g_eval(xk) @ input_fn(tk, xk)

    for k in range(steps):
        tk = t[k]
        k1 = rhs(tk, x)
        q1 = integrand(tk, x)
        x2 = x + h / 2 * k1
        k2 = rhs(tk + h / 2, x2)
        q2 = integrand(tk + h / 2, x2)
        x3 = x + h / 2 * k2
        k3 = rhs(tk + h / 2, x3)
        q3 = integrand(tk + h / 2, x3)
        x4 = x + h * k3
        k4 = rhs(tk + h, x4)
        q4 = integrand(tk + h, x4)
        x = x + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        q = q + (h / 6) * (q1 + 2 * q2 + 2 * q3 + q4)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGE_LIMIT:
            raise SimulationError(f"state diverged at t={tk + h:.4g}")
        X[k + 1] = x
        I[k + 1] = q
    return t, X, I


def closed_loop_cost(sim: SimResult, Q, R) -> float:
    """Trapezoidal integral of Q(x) + u^T R u over the stored trajectory.

    ``sim.costs['truncated']`` is set when the final state has not settled
    below SETTLE_TOL (the improper integral was cut off early).
    """
    if sim.diverged:
        raise SimulationError("cost of a diverged trajectory is not finite")
    qe = Q.compile()
    R = np.atleast_2d(np.asarray(R, dtype=float))
    integrand = np.asarray(qe(sim.x)) + np.einsum("ki,ij,kj->k", sim.u, R, sim.u)
    if not np.all(np.isfinite(integrand)):
        raise SimulationError("non-finite running cost")
    sim.costs["truncated"] = bool(np.linalg.norm(sim.final_state) > SETTLE_TOL)
    return float(np.trapezoid(integrand, sim.t))


def stability_probe(sys, policy, omega, T: float = SETTLE_HORIZON,
                    h: float = EVAL_STEP) -> tuple[bool, float]:
    """Simulate from the 2n axis-extreme points of Omega; all must settle.

    Returns (stable, margin) with margin the largest final norm seen.
    """
    cfg = IntegratorConfig(h=h, T=T)
    margin = 0.0
    ok = True
    for x0 in omega.axis_extremes():
        sim = simulate(sys, policy, x0, cfg)
        if sim.diverged:
            return False, float("inf")
        fn = float(np.linalg.norm(sim.final_state))
        margin = max(margin, fn)
        if fn >= SETTLE_TOL:
            ok = False
    return ok, margin


def sim_to_csv(sim: SimResult, path) -> None:
    """Trajectory log: t, x1..xn, u1..um, e1..em."""
    n = sim.x.shape[1]
    m = sim.u.shape[1]
    header = ",".join(
        ["t"] + [f"x{i+1}" for i in range(n)] + [f"u{i+1}" for i in range(m)]
        + [f"e{i+1}" for i in range(m)]
    )
    data = np.column_stack([sim.t, sim.x, sim.u, sim.e])
    np.savetxt(path, data, delimiter=",", header=header, comments="")
