"""Model-based iterative multi-objective SOS optimization.

Each aspiration round runs a relaxed policy iteration: with the previous
policy held fixed, a linear SOS program proposes new value coefficients
(minimizing the integral of V1 over the region, monotonically below the
previous V1), then the policy is refreshed from the stationary condition.
Shrinking the aspiration bound between rounds traces out the efficient
policy set.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import simkit
from .polyalg import (
    MonomialBasis,
    Polynomial,
    box_moment_integral,
    gram_monomials,
    matvec,
    monomial_basis,
    poly_dot,
)
from .sosprog import (
    POS_EPS,
    AffinePoly,
    ConicSolver,
    DecisionVector,
    SdpSolution,
    SosProgram,
    compile_program,
    solve,
)
from .sysmodel import (
    AspirationSchedule,
    ControlAffineSystem,
    CostSpec,
    Policy,
    Region,
    ValueFunction,
    degree_bound,
    extract_policy,
    lyap_deficit,
    pareto_dominates,
)


class MososError(RuntimeError):
    pass


class SeedingError(MososError):
    pass


class SdpInfeasibleError(MososError):
    """The iterate SOS program has no feasible solution (round exhausted)."""


class NumericalFailureError(MososError):
    pass


class MaxItersExceededError(MososError):
    pass


class EmptyParetoSetError(MososError):
    pass


@dataclass
class IterationConfig:
    d: int
    omega: Region
    gamma: float = 1e-4
    max_iters: int = 50
    epsilon_pd: float = POS_EPS
    solver: ConicSolver | None = None
    value_basis: MonomialBasis | None = None  # defaults to the full m(2,2d)
    dbar: int | None = None  # defaults to the degree bound formula

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")

    def resolve_bases(self, sys: ControlAffineSystem, cost: CostSpec, delta: Polynomial):
        vb = self.value_basis or monomial_basis(sys.n, 2, 2 * self.d)
        dbar = self.dbar or degree_bound(sys, cost, self.d, delta)
        return vb, monomial_basis(sys.n, 1, dbar), dbar


@dataclass
class IterationState:
    k: int
    V1: ValueFunction
    V2: ValueFunction | None
    policy: Policy
    status: str = "running"  # running | converged | infeasible
    objective: float = math.nan
    dC1: float = math.nan
    mono_gram_min_eig: float | None = None
    solver_info: dict = field(default_factory=dict)

    @property
    def C1(self) -> np.ndarray:
        return self.V1.coeffs


@dataclass
class ParetoRecord:
    round_index: int
    delta: Polynomial
    policy: Policy
    J1: float
    J2: float
    iterations: int
    V1: ValueFunction
    V2: ValueFunction | None

    @property
    def costs(self):
        return (self.J1, self.J2)


@dataclass
class ParetoSet:
    records: list[ParetoRecord] = field(default_factory=list)
    iteration_log: list[dict] = field(default_factory=list)

    def filter_dominated(self) -> "ParetoSet":
        keep = []
        for i, rec in enumerate(self.records):
            dominated = any(
                pareto_dominates(other.costs, rec.costs)
                for j, other in enumerate(self.records)
                if j != i
            )
            if not dominated:
                keep.append(rec)
        return ParetoSet(keep, self.iteration_log)

    def to_json(self) -> str:
        out = []
        for rec in self.records:
            out.append(
                {
                    "round": rec.round_index,
                    "J1": rec.J1,
                    "J2": rec.J2,
                    "iterations": rec.iterations,
                    "delta": _poly_records(rec.delta),
                    "policy": {
                        "basis": [list(e) for e in rec.policy.basis.entries],
                        "gains": rec.policy.gains.tolist(),
                    },
                }
            )
        return json.dumps({"pareto": out}, indent=2)


def iteration_log_csv(rows: list[dict]) -> str:
    lines = ["round,k,objective,dC1,status"]
    for r in rows:
        lines.append(
            f"{r['round']},{r['k']},{r['objective']:.12g},{r['dC1']:.12g},{r['status']}"
        )
    return "\n".join(lines) + "\n"


def _poly_records(p: Polynomial) -> list[dict]:
    return [
        {"exponents": list(e), "coeff": c}
        for e, c in sorted(p.terms.items(), key=lambda kv: (sum(kv[0]), tuple(-v for v in kv[0])))
    ]


# ---------------------------------------------------------------------------
# SOS program assembly


def _closed_loop_field(sys: ControlAffineSystem, u_hat: Policy):
    uvec = u_hat.as_polyvector()
    gu = matvec(sys.g, uvec)
    return [fi + gi for fi, gi in zip(sys.f, gu)], uvec


def _control_penalty(uvec, R) -> Polynomial:
    R = np.atleast_2d(np.asarray(R, dtype=float))
    p = Polynomial.zero(uvec[0].n)
    for i in range(len(uvec)):
        for j in range(len(uvec)):
            if R[i, j] != 0.0:
                p = p + R[i, j] * (uvec[i] * uvec[j])
    return p


def _sum_squares_of_states(n: int) -> Polynomial:
    q = Polynomial.zero(n)
    for j in range(n):
        q = q + Polynomial.variable(n, j) ** 2
    return q


def build_iterate_program(
    sys: ControlAffineSystem,
    cost: CostSpec,
    config: IterationConfig,
    u_hat: Policy,
    delta: Polynomial | None,
    V1_prev: ValueFunction | None,
    objective_index: int = 1,
    single_objective: bool = False,
):
    """Linear SOS program of one relaxed policy-iteration step.

    ``single_objective`` drops the aspiration sandwich and the other value
    function (used for seeding checks and the utopia solves).  When
    ``V1_prev`` is None the monotone-decrease constraint is omitted
    (seeding mode).
    """
    vb, _pb, dbar = config.resolve_bases(sys, cost, delta or Polynomial.zero(sys.n))
    N = len(vb)
    names = [("C1", N)] if single_objective else [("C1", N), ("C2", N)]
    dec = DecisionVector(names)
    prog = SosProgram(dec)

    f_cl, uvec = _closed_loop_field(sys, u_hat)
    # shared sensitivities: d/dCj of grad(V)^T f_cl
    drift_sens = {}
    for j, e in enumerate(vb.entries):
        drift_sens[j] = poly_dot(Polynomial.monomial(e).gradient(), f_cl)

    sq = _sum_squares_of_states(sys.n)
    # Adaptive Gram bases matched to each constraint's degree range, with the
    # deficit constraints additionally capped at half the aspiration degree
    # (at least d).  The sandwich 0 <= L2 <= delta forces every coefficient
    # of L2 above deg(delta) to vanish at any feasible point (the leading
    # forms of L2 and delta - L2 would both have to be nonnegative), so the
    # high-degree Gram blocks are zero across the whole feasible set and the
    # program has no interior.  Dropping those blocks and keeping the
    # coefficient matches as plain equalities restores an interior point for
    # the interior-point backend.  The same cap is applied to L1: its
    # high-degree blocks are structurally rank-deficient for cubic drift
    # terms, which equally destroys strict feasibility.
    cap_half = config.d
    if delta is not None and not single_objective:
        cap_half = max(cap_half, math.ceil(delta.degree() / 2))
    gram_V = monomial_basis(sys.n, 1, config.d if vb.complete else math.ceil(vb.d2 / 2))

    def _capped_gram(expr: AffinePoly) -> MonomialBasis | None:
        dmin, dmax = expr.degree_range()
        if math.ceil(dmax / 2) <= cap_half:
            return None  # the adaptive default already fits under the cap
        return gram_monomials(sys.n, dmin // 2, cap_half)

    def add_deficit(name, i_obj, block):
        base = -cost.Q(i_obj) - _control_penalty(uvec, cost.R(i_obj))
        sens = {dec.index(block, j): -drift_sens[j] for j in range(N)}
        expr = AffinePoly(base, sens)
        prog.add_sos(name, expr, gram_basis=_capped_gram(expr))

    if single_objective:
        i = objective_index
        add_deficit(f"L{i}", i, "C1")
        if V1_prev is not None:
            sens = {dec.index("C1", j): -vb.to_polynomial(np.eye(N)[j]) for j in range(N)}
            base = V1_prev.poly()
            prog.add_sos("mono", AffinePoly(base, sens), gram_basis=gram_V)
        sens = {dec.index("C1", j): vb.to_polynomial(np.eye(N)[j]) for j in range(N)}
        prog.add_sos("pd1", AffinePoly(-config.epsilon_pd * sq, sens), gram_basis=gram_V)
    else:
        add_deficit("L1", 1, "C1")
        add_deficit("L2", 2, "C2")
        if delta is None:
            raise MososError("aspiration polynomial required for the bi-objective program")
        base = delta + cost.Q(2) + _control_penalty(uvec, cost.R(2))
        sens = {dec.index("C2", j): drift_sens[j] for j in range(N)}
        asp = AffinePoly(base, sens)
        prog.add_sos("aspiration", asp, gram_basis=_capped_gram(asp))
        if V1_prev is not None:
            sens = {dec.index("C1", j): -vb.to_polynomial(np.eye(N)[j]) for j in range(N)}
            prog.add_sos("mono", AffinePoly(V1_prev.poly(), sens), gram_basis=gram_V)
        for blk, name in (("C1", "pd1"), ("C2", "pd2")):
            sens = {dec.index(blk, j): vb.to_polynomial(np.eye(N)[j]) for j in range(N)}
            prog.add_sos(name, AffinePoly(-config.epsilon_pd * sq, sens), gram_basis=gram_V)

    moments = box_moment_integral(vb, config.omega.box)
    c = np.zeros(dec.total)
    c[dec.slice_of("C1")] = moments
    prog.set_objective(c)
    return prog, dec, vb


def _solve_or_raise(prog, solver) -> SdpSolution:
    sol = solve(compile_program(prog), solver)
    if sol.status == "infeasible":
        raise SdpInfeasibleError("SOS program infeasible")
    if sol.status == "numerical-failure":
        raise NumericalFailureError(f"conic solve failed: {sol.info}")
    return sol


# ---------------------------------------------------------------------------
# seeding (Assumption-2 style certified initial tuple)


def _lqr_seed_policy(sys: ControlAffineSystem, policy_basis: MonomialBasis) -> Policy:
    A = np.zeros((sys.n, sys.n))
    x0 = np.zeros(sys.n)
    for i, fi in enumerate(sys.f):
        for j, dfi in enumerate(fi.gradient()):
            A[i, j] = dfi.eval(x0)
    B = sys.g_eval(x0).reshape(sys.n, sys.m)
    try:
        P = scipy.linalg.solve_continuous_are(A, B, np.eye(sys.n), np.eye(sys.m))
    except Exception as exc:
        raise SeedingError(f"linearized stabilization failed: {exc}") from exc
    K = B.T @ P
    if np.max(np.linalg.eigvals(A - B @ K).real) >= 0:
        raise SeedingError("linearized closed loop is not Hurwitz; system unstabilizable?")
    return Policy.linear(-K, sys.n, policy_basis)


def initial_feasible(
    sys: ControlAffineSystem,
    cost: CostSpec,
    config: IterationConfig,
    delta0: Polynomial,
    u0: Policy | None = None,
) -> IterationState:
    """Certified seed tuple (V1^0, V2^0, u^0) for a given aspiration."""
    vb, pb, _ = config.resolve_bases(sys, cost, delta0)
    if u0 is None:
        u0 = _lqr_seed_policy(sys, pb)
    elif len(u0.basis) != len(pb) or u0.basis.entries != pb.entries:
        u0 = Policy(pb, _lift_gains(u0, pb))
    prog, dec, vb = build_iterate_program(sys, cost, config, u0, delta0, V1_prev=None)
    try:
        sol = _solve_or_raise(prog, config.solver)
    except SdpInfeasibleError:
        raise SeedingError(_diagnose_seed_failure(prog, config.solver)) from None
    V1 = ValueFunction(vb, sol.y[dec.slice_of("C1")])
    V2 = ValueFunction(vb, sol.y[dec.slice_of("C2")])
    return IterationState(k=0, V1=V1, V2=V2, policy=u0, status="running",
                          objective=sol.objective, solver_info=sol.info)


def _lift_gains(u: Policy, pb: MonomialBasis) -> np.ndarray:
    gains = np.zeros((u.gains.shape[0], len(pb)))
    for col, e in enumerate(u.basis.entries):
        if abs(u.gains[:, col]).max() == 0.0:
            continue
        gains[:, pb.index(e)] = u.gains[:, col]
    return gains


def _diagnose_seed_failure(prog: SosProgram, solver) -> str:
    """Name the first certificate that fails on its own."""
    for con in prog.constraints:
        sub = SosProgram(prog.decisions)
        sub.add_sos(con.name, con.expr, con.gram_basis)
        # pin decisions the constraint does not touch so the subproblem
        # keeps full column rank
        for j in range(prog.decisions.total):
            if j not in con.expr.sens:
                sub.add_equality({j: 1.0}, 0.0)
        sol = solve(compile_program(sub), solver)
        if sol.status == "infeasible":
            return f"seeding failed: certificate {con.name!r} infeasible on its own"
    return "seeding failed: certificates jointly infeasible"


# ---------------------------------------------------------------------------
# iteration


def iterate_once(
    state: IterationState,
    sys: ControlAffineSystem,
    cost: CostSpec,
    delta_r: Polynomial,
    config: IterationConfig,
) -> IterationState:
    """One accepted step: solve the SOS program under the previous policy,
    then refresh the policy from the stationary condition."""
    prog, dec, vb = build_iterate_program(
        sys, cost, config, state.policy, delta_r, V1_prev=state.V1
    )
    sol = _solve_or_raise(prog, config.solver)
    C1 = sol.y[dec.slice_of("C1")]
    C2 = sol.y[dec.slice_of("C2")]
    V1 = ValueFunction(vb, C1)
    V2 = ValueFunction(vb, C2)
    _vb, pb, _ = config.resolve_bases(sys, cost, delta_r)
    policy = extract_policy(sys, cost.R1, V1, pb)
    mono_eig = None
    if "mono" in sol.grams and sol.grams["mono"].size:
        mono_eig = float(np.linalg.eigvalsh(sol.grams["mono"])[0])
    return IterationState(
        k=state.k + 1,
        V1=V1,
        V2=V2,
        policy=policy,
        status="running",
        objective=sol.objective,
        dC1=float(np.linalg.norm(C1 - state.C1)),
        mono_gram_min_eig=mono_eig,
        solver_info=sol.info,
    )


def run_fixed_aspiration(
    sys: ControlAffineSystem,
    cost: CostSpec,
    delta_r: Polynomial,
    config: IterationConfig,
    seed: IterationState,
) -> tuple[IterationState, int, list[IterationState]]:
    """Iterate to convergence under a fixed aspiration.

    Returns (last feasible state, iteration count, per-iteration history).
    Raises SdpInfeasibleError if not even the first iterate is feasible and
    MaxItersExceededError if the gamma test never fires.
    """
    state = seed
    history: list[IterationState] = []
    for k in range(1, config.max_iters + 1):
        try:
            new = iterate_once(state, sys, cost, delta_r, config)
        except SdpInfeasibleError:
            if not history:
                raise
            state.status = "infeasible"
            return state, k - 1, history
        history.append(new)
        # k >= 2: the seed solves the same program as the first iterate, so
        # dC1 can be 0 before the refreshed policy has been tried once
        converged = new.dC1 <= config.gamma and k >= 2
        state = new
        if converged:
            state.status = "converged"
            return state, k, history
    raise MaxItersExceededError(f"no convergence within {config.max_iters} iterations")


def evaluate_cost_pair(
    sys: ControlAffineSystem,
    cost: CostSpec,
    policy: Policy,
    omega: Region,
    x0: np.ndarray | None = None,
) -> tuple[float, float]:
    x0 = omega.canonical_state() if x0 is None else np.asarray(x0, dtype=float)
    cfg = simkit.IntegratorConfig(h=simkit.EVAL_STEP, T=simkit.SETTLE_HORIZON)
    sim = simkit.simulate(sys, policy, x0, cfg)
    J1 = simkit.closed_loop_cost(sim, cost.Q1, cost.R1)
    J2 = simkit.closed_loop_cost(sim, cost.Q2, cost.R2)
    return J1, J2


def sweep_aspirations(
    sys: ControlAffineSystem,
    cost: CostSpec,
    schedule: AspirationSchedule,
    config: IterationConfig,
    u0: Policy | None = None,
    x0: np.ndarray | None = None,
) -> ParetoSet:
    """Full Algorithm-1 sweep over shrinking aspirations."""
    records: list[ParetoRecord] = []
    log: list[dict] = []
    for r in range(schedule.rounds + 1):
        delta_r = schedule.delta(r)
        try:
            seed = initial_feasible(sys, cost, config, delta_r, u0=u0)
            state, iters, history = run_fixed_aspiration(sys, cost, delta_r, config, seed)
        except (SeedingError, SdpInfeasibleError):
            break  # aspiration too tight: sweep exhausted
        for st in history:
            log.append(
                {"round": r, "k": st.k, "objective": st.objective,
                 "dC1": st.dC1, "status": st.status}
            )
        J1, J2 = evaluate_cost_pair(sys, cost, state.policy, config.omega, x0)
        records.append(
            ParetoRecord(r, delta_r, state.policy, J1, J2, iters, state.V1, state.V2)
        )
    if not records:
        raise EmptyParetoSetError("aspiration sweep produced no feasible record")
    return ParetoSet(records, log).filter_dominated()


def compute_utopia(
    sys: ControlAffineSystem,
    cost: CostSpec,
    config: IterationConfig,
    u0: Policy | None = None,
    x0: np.ndarray | None = None,
) -> tuple[float, float]:
    """Per-objective ideal costs from two unconstrained single-objective solves."""
    out = []
    for i in (1, 2):
        solo = CostSpec(cost.Q(i), cost.Q(i), cost.R(i), cost.R(i))
        vb, pb, _ = config.resolve_bases(sys, solo, Polynomial.zero(sys.n))
        seed_u = u0 if u0 is not None else _lqr_seed_policy(sys, pb)
        if seed_u.basis.entries != pb.entries:
            seed_u = Policy(pb, _lift_gains(seed_u, pb))
        prog, dec, vb = build_iterate_program(
            sys, solo, config, seed_u, None, V1_prev=None, objective_index=1,
            single_objective=True,
        )
        try:
            sol = _solve_or_raise(prog, config.solver)
        except SdpInfeasibleError:
            raise SeedingError(f"single-objective seeding failed for objective {i}") from None
        state = IterationState(0, ValueFunction(vb, sol.y[dec.slice_of("C1")]), None, seed_u)
        for _k in range(1, config.max_iters + 1):
            prog, dec, vb = build_iterate_program(
                sys, solo, config, state.policy, None, V1_prev=state.V1,
                single_objective=True,
            )
            sol = _solve_or_raise(prog, config.solver)
            C = sol.y[dec.slice_of("C1")]
            d = float(np.linalg.norm(C - state.V1.coeffs))
            V = ValueFunction(vb, C)
            state = IterationState(state.k + 1, V, None, extract_policy(sys, solo.R1, V, pb))
            if d <= config.gamma and _k >= 2:
                break
        Ji = evaluate_cost_pair(sys, solo, state.policy, config.omega, x0)[0]
        out.append(Ji)
    return out[0], out[1]
