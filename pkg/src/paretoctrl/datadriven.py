"""Data-driven variant of the iterative multi-objective synthesis.

Each iteration excites the plant with the current policy plus a
sum-of-sinusoids probing input and records window integrals along the
trajectory.  Least squares on the integrated Bellman identities yields
affine maps from value coefficients to (a) the running-cost deficit
polynomial each SOS constraint needs and (b) the refreshed policy gains, so
the per-round iteration mirrors the model-based loop with those maps
substituted for the model.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass

import numpy as np

from . import simkit
from .mosos import (
    EmptyParetoSetError,
    IterationConfig,
    IterationState,
    MaxItersExceededError,
    MososError,
    NumericalFailureError,
    ParetoRecord,
    ParetoSet,
    SdpInfeasibleError,
    SeedingError,
    _lift_gains,
    _solve_or_raise,
    evaluate_cost_pair,
)
from .polyalg import MonomialBasis, Polynomial, box_moment_integral, monomial_basis
from .sosprog import AffinePoly, DecisionVector, SosProgram
from .sysmodel import (
    AspirationSchedule,
    ControlAffineSystem,
    CostSpec,
    Policy,
    Region,
    ValueFunction,
)

# default probe frequencies (rad/time), mutually incommensurate
DEFAULT_FREQS = (1.0, 2.3, 3.7, 5.1, 7.9, 11.3)
PROBE_SCALE = 0.1  # probe amplitude relative to the seed policy's peak
RANK_RTOL = 1e-8
COND_WARN = 1e10
GRAD_FLOOR = 1e-9  # |grad V1|^2 below this treats the alignment factor as 0
# identified deficit rows whose whole affine row falls below this relative
# level are treated as structural zeros (least-squares noise would otherwise
# leave tiny indefinite leading coefficients no Gram matrix can absorb)
DEFICIT_CLEAN_TOL = 1e-3


class DataDrivenError(MososError):
    pass


class TrajectoryEscapeError(DataDrivenError):
    """Probe trajectory left the doubled operating region."""


class RankDeficiencyError(DataDrivenError):
    """Regressor matrix is numerically rank deficient."""


@dataclass
class ProbeSpec:
    """Per-channel sum of sinusoids e_i(t) = sum_j a_ij sin(w_j t + p_ij)."""

    amplitudes: np.ndarray  # (m, J)
    freqs: np.ndarray  # (J,)
    phases: np.ndarray  # (m, J)

    def __post_init__(self):
        self.amplitudes = np.atleast_2d(np.asarray(self.amplitudes, dtype=float))
        self.freqs = np.asarray(self.freqs, dtype=float)
        self.phases = np.atleast_2d(np.asarray(self.phases, dtype=float))
        m, J = self.amplitudes.shape
        if self.freqs.shape != (J,) or self.phases.shape != (m, J):
            raise DataDrivenError("probe amplitude/frequency/phase shapes disagree")
        if np.any(self.freqs <= 0):
            raise DataDrivenError("probe frequencies must be positive")

    @property
    def m(self):
        return self.amplitudes.shape[0]

    def bound(self) -> np.ndarray:
        """Per-channel amplitude bound |e_i(t)| <= sum_j |a_ij|."""
        return np.sum(np.abs(self.amplitudes), axis=1)

    def eval(self, t: float) -> np.ndarray:
        return np.sum(
            self.amplitudes * np.sin(self.freqs[None, :] * t + self.phases), axis=1
        )

    @classmethod
    def zero(cls, m: int) -> "ProbeSpec":
        return cls(np.zeros((m, 1)), np.ones(1), np.zeros((m, 1)))

    @classmethod
    def for_policy(
        cls,
        policy: Policy,
        omega: Region,
        scale: float = PROBE_SCALE,
        freqs=DEFAULT_FREQS,
        seed: int = 0,
    ) -> "ProbeSpec":
        """Amplitudes at ``scale`` times the seed policy's peak magnitude
        over the region (per channel), phases spread deterministically."""
        pts = omega.sample_grid(512, seed=seed)
        u = np.array([policy.eval(x) for x in pts])
        peak = np.max(np.abs(u), axis=0)
        peak = np.where(peak > 0, peak, 1.0)  # a zero seed still gets excitation
        freqs = np.asarray(freqs, dtype=float)
        J = len(freqs)
        m = policy.m
        amps = (scale / J) * np.repeat(peak[:, None], J, axis=1)
        golden = 2.399963229728653  # ~2*pi/phi^2, decorrelates the channels
        phases = (golden * (np.arange(m)[:, None] * J + np.arange(J)[None, :])) % (
            2 * np.pi
        )
        return cls(amps, freqs, phases)


@dataclass
class DataWindows:
    """Strictly increasing integration-window boundaries t_0 < ... < t_q,
    resolved at quadrature sub-step h."""

    boundaries: np.ndarray
    h: float = simkit.DATA_STEP

    def __post_init__(self):
        self.boundaries = np.asarray(self.boundaries, dtype=float)
        if self.boundaries.ndim != 1 or len(self.boundaries) < 2:
            raise DataDrivenError("need at least two window boundaries")
        if np.any(np.diff(self.boundaries) <= 0):
            raise DataDrivenError("window boundaries must be strictly increasing")
        if self.boundaries[0] < 0:
            raise DataDrivenError("window boundaries must be nonnegative")
        if self.h <= 0:
            raise DataDrivenError("sub-step must be positive")
        idx = np.round(self.boundaries / self.h).astype(int)
        if np.any(np.abs(self.boundaries - idx * self.h) > 1e-9):
            raise DataDrivenError("window boundaries must align with the sub-step")

    @property
    def q(self) -> int:
        return len(self.boundaries) - 1

    def indices(self) -> np.ndarray:
        return np.round(self.boundaries / self.h).astype(int)

    @classmethod
    def uniform(cls, t_end: float, q: int, t_start: float = 0.0,
                h: float = simkit.DATA_STEP) -> "DataWindows":
        return cls(np.linspace(t_start, t_end, q + 1), h)


def regression_columns(n: int, m: int, dbar: int) -> int:
    """n_{2dbar} + m * n_{dbar}: deficit basis size plus gain entries."""
    n_l = len(monomial_basis(n, 2, 2 * dbar))
    n_p = len(monomial_basis(n, 1, dbar))
    return n_l + m * n_p


def default_window_count(sys: ControlAffineSystem, dbar: int) -> int:
    """Twice the regressor column count."""
    return 2 * regression_columns(sys.n, sys.m, dbar)


@dataclass
class RegressionData:
    """Window-integral regression blocks for one iterate.

    Identity per window j and objective i:
        phi_i[j] . [l_i; vec(K)] = Xi_i[j] + theta_i[j] . C_i
    with l_i the coefficients of the i-th running-cost deficit polynomial and
    vec(K) the column-stacked refreshed gains (shared between rows).
    """

    phi1: np.ndarray
    phi2: np.ndarray
    Xi1: np.ndarray
    Xi2: np.ndarray
    theta1: np.ndarray
    theta2: np.ndarray
    n_l: int  # leading columns of phi holding deficit coefficients
    traj_t: np.ndarray | None = None
    traj_x: np.ndarray | None = None
    traj_u: np.ndarray | None = None
    traj_e: np.ndarray | None = None

    def __post_init__(self):
        q = self.phi1.shape[0]
        if not (
            self.phi2.shape == self.phi1.shape
            and self.Xi1.shape == self.Xi2.shape == (q,)
            and self.theta1.shape == self.theta2.shape
            and self.theta1.shape[0] == q
        ):
            raise DataDrivenError("regression block shapes disagree")
        if not 0 < self.n_l <= self.phi1.shape[1]:
            raise DataDrivenError("invalid deficit-column count")


def alignment_factor(V1: ValueFunction, V2: ValueFunction):
    """Pointwise ratio s(x) = (grad V2 . grad V1) / |grad V1|^2, zero where
    the first gradient vanishes (near the origin)."""
    g1 = [p.compile() for p in V1.gradient()]
    g2 = [p.compile() for p in V2.gradient()]

    def s(x: np.ndarray) -> float:
        a = np.array([f(x) for f in g1])
        b = np.array([f(x) for f in g2])
        denom = float(a @ a)
        if denom <= GRAD_FLOOR:
            return 0.0
        return float(a @ b) / denom

    return s


def iteration_bases(sys: ControlAffineSystem, config: IterationConfig, dbar: int):
    """(value, deficit, policy) monomial bases for one aspiration round."""
    value_basis = config.value_basis or monomial_basis(sys.n, 2, 2 * config.d)
    l_basis = monomial_basis(sys.n, 2, 2 * dbar)
    policy_basis = monomial_basis(sys.n, 1, dbar)
    return value_basis, l_basis, policy_basis


def simulate_collect(
    sys: ControlAffineSystem,
    u_k: Policy,
    probe: ProbeSpec,
    windows: DataWindows,
    V_prev: tuple[ValueFunction, ValueFunction],
    cost: CostSpec,
    bases: tuple[MonomialBasis, MonomialBasis, MonomialBasis],
    x0: np.ndarray,
    omega: Region,
) -> RegressionData:
    """One probing experiment u = u_k(x) + e(t); accumulates every window
    integral with the same fourth-order sub-steps as the state.

    The trajectory must stay inside the doubled region; leaving it raises
    TrajectoryEscapeError (the data would not reflect the operating regime).

    Both regressors share the same gain-block columns: each objective's
    Bellman identity carries its own input-coupling unknown
    K_i = -1/2 R1^-1 g' grad(V_i), so the window identities hold exactly
    regardless of how the two value gradients are oriented.  Only the first
    map's gain rows are used to refresh the policy.
    """
    value_basis, l_basis, policy_basis = bases
    R1 = cost.R1
    n_l = len(l_basis)
    n_p = len(policy_basis)
    m = sys.m
    nk = m * n_p

    def input_fn(t, x):
        return u_k.eval(x) + probe.eval(t)

    def integrand(t, x):
        ml = l_basis.eval_vector(x)
        mp = policy_basis.eval_vector(x)
        R1e = R1 @ probe.eval(t)
        # kron(m_p, R1 e) with index c*m + i, matching vec(K) = K.ravel('F')
        kron = (mp[:, None] * R1e[None, :]).ravel()
        u = u_k.eval(x)
        r1 = cost.Q1.eval(x) + u @ cost.R1 @ u
        r2 = cost.Q2.eval(x) + u @ cost.R2 @ u
        out = np.empty(2 * (n_l + nk) + 2)
        out[:n_l] = -ml
        out[n_l : n_l + nk] = -2.0 * kron
        out[n_l + nk : 2 * n_l + nk] = -ml
        out[2 * n_l + nk : 2 * (n_l + nk)] = -2.0 * kron
        out[-2] = r1
        out[-1] = r2
        return out

    steps = int(windows.indices()[-1])
    try:
        t, X, I = simkit.integrate_with_quadrature(
            sys, input_fn, np.asarray(x0, dtype=float), windows.h, steps, integrand
        )
    except simkit.SimulationError as exc:
        raise TrajectoryEscapeError(str(exc)) from exc
    big = omega.scaled(2.0)
    lo = np.array([a for a, _ in big.box])
    hi = np.array([b for _, b in big.box])
    if np.any(X < lo) or np.any(X > hi):
        raise TrajectoryEscapeError("probe trajectory left the doubled region")

    idx = windows.indices()
    dI = I[idx[1:]] - I[idx[:-1]]
    phi1 = dI[:, : n_l + nk]
    phi2 = dI[:, n_l + nk : 2 * (n_l + nk)]
    Xi1 = dI[:, -2]
    Xi2 = dI[:, -1]
    mv = value_basis.eval_batch(X[idx])
    theta = mv[1:] - mv[:-1]
    U = np.array([u_k.eval(x) for x in X])
    E = np.array([probe.eval(tk) for tk in t])
    return RegressionData(
        phi1, phi2, Xi1, Xi2, theta, theta.copy(), n_l,
        traj_t=t, traj_x=X, traj_u=U, traj_e=E,
    )


def _column_scales(phi: np.ndarray) -> np.ndarray:
    """Per-column equilibration factors (1/norm, or 1 for zero columns).

    Window integrals of high-degree monomials can be many orders of magnitude
    smaller than the low-degree ones, so the raw singular-value ratio would
    report a false rank deficiency.  Zero columns keep scale 1 and therefore
    still trigger the deficiency check."""
    norms = np.linalg.norm(phi, axis=0)
    scales = np.ones_like(norms)
    nz = norms > 0.0
    scales[nz] = 1.0 / norms[nz]
    return scales


def rank_check(phi: np.ndarray) -> float:
    """Smallest-to-largest singular-value ratio of the column-equilibrated
    regressor; raises when deficient."""
    sv = np.linalg.svd(phi * _column_scales(phi), compute_uv=False)
    ratio = float(sv[-1] / sv[0]) if sv[0] > 0 else 0.0
    if ratio <= RANK_RTOL:
        raise RankDeficiencyError(
            f"regressor singular-value ratio {ratio:.3e} <= {RANK_RTOL:.0e}; "
            "probe not exciting enough or windows too few"
        )
    return ratio


@dataclass
class AffineLsMap:
    """Least-squares solution map  z(C) = M C + b  with a row split between
    deficit coefficients (first n_l rows) and gain entries."""

    M: np.ndarray
    b: np.ndarray
    n_l: int
    cond: float = np.nan

    def deficit_rows(self):
        return self.M[: self.n_l], self.b[: self.n_l]

    def gain_rows(self):
        return self.M[self.n_l :], self.b[self.n_l :]


def build_ls_maps(reg: RegressionData) -> tuple[AffineLsMap, AffineLsMap]:
    out = []
    for phi, Xi, theta in ((reg.phi1, reg.Xi1, reg.theta1), (reg.phi2, reg.Xi2, reg.theta2)):
        ncols = phi.shape[1]
        # an identically-zero gain block (e.g. a vanishing probe on a fully
        # settled trajectory) carries no information, so solve the deficit
        # block alone and report zero gains
        active = phi
        if np.allclose(phi[:, reg.n_l :], 0.0):
            active = phi[:, : reg.n_l]
        rank_check(active)
        # solve in column-equilibrated coordinates and unscale the solution
        scales = _column_scales(active)
        eq = active * scales
        sv = np.linalg.svd(eq, compute_uv=False)
        cond = float(sv[0] / sv[-1])
        if cond > COND_WARN:
            warnings.warn(
                f"regressor condition number {cond:.3e} exceeds {COND_WARN:.0e}; "
                "identified maps may be inaccurate",
                RuntimeWarning,
                stacklevel=2,
            )
        P = scales[:, None] * np.linalg.pinv(eq)
        M = np.zeros((ncols, theta.shape[1]))
        b = np.zeros(ncols)
        M[: active.shape[1]] = P @ theta
        b[: active.shape[1]] = P @ Xi
        out.append(AffineLsMap(M, b, reg.n_l, cond))
    return out[0], out[1]


# ---------------------------------------------------------------------------
# data-driven iteration


def _deficit_affine(
    dec: DecisionVector,
    block: str,
    ls: AffineLsMap,
    l_basis: MonomialBasis,
    negate: bool = False,
    shift: Polynomial | None = None,
) -> AffinePoly:
    """SOS-constraint polynomial from the identified deficit map."""
    M, b = ls.deficit_rows()
    scale = max(np.max(np.abs(M), initial=0.0), np.max(np.abs(b), initial=0.0), 1e-12)
    keep = np.maximum(np.max(np.abs(M), axis=1), np.abs(b)) > DEFICIT_CLEAN_TOL * scale
    M = np.where(keep[:, None], M, 0.0)
    b = np.where(keep, b, 0.0)
    sgn = -1.0 if negate else 1.0
    base = l_basis.to_polynomial(sgn * b)
    if shift is not None:
        base = base + shift
    sens = {}
    for j in range(M.shape[1]):
        col = M[:, j]
        if np.any(col):
            sens[dec.index(block, j)] = l_basis.to_polynomial(sgn * col)
    return AffinePoly(base, sens)


def _gain_from_map(ls: AffineLsMap, C: np.ndarray, m: int, n_p: int) -> np.ndarray:
    Mk, bk = ls.gain_rows()
    return (Mk @ C + bk).reshape(n_p, m).T  # inverse of the column-stacked vec


def iterate_once_dd(
    state: IterationState,
    ls_maps: tuple[AffineLsMap, AffineLsMap],
    delta_r: Polynomial | None,
    config: IterationConfig,
    bases: tuple[MonomialBasis, MonomialBasis, MonomialBasis],
) -> IterationState:
    """One data-driven step: solve the SOS program through the identified
    maps, refresh the policy from the gain rows of the first map."""
    value_basis, l_basis, policy_basis = bases
    ls1, ls2 = ls_maps

    N = len(value_basis)
    dec = DecisionVector([("C1", N), ("C2", N)])
    prog = SosProgram(dec)
    prog.add_sos("L1", _deficit_affine(dec, "C1", ls1, l_basis))
    prog.add_sos("L2", _deficit_affine(dec, "C2", ls2, l_basis))
    if delta_r is not None:
        prog.add_sos(
            "aspiration", _deficit_affine(dec, "C2", ls2, l_basis, negate=True, shift=delta_r)
        )
    n = value_basis.n
    sq = Polynomial.zero(n)
    for j in range(n):
        sq = sq + Polynomial.variable(n, j) ** 2
    gram_V = monomial_basis(n, 1, config.d)
    sens = {dec.index("C1", j): -value_basis.to_polynomial(np.eye(N)[j]) for j in range(N)}
    prog.add_sos("mono", AffinePoly(state.V1.poly(), sens), gram_basis=gram_V)
    for blk, name in (("C1", "pd1"), ("C2", "pd2")):
        sens = {dec.index(blk, j): value_basis.to_polynomial(np.eye(N)[j]) for j in range(N)}
        prog.add_sos(name, AffinePoly(-config.epsilon_pd * sq, sens), gram_basis=gram_V)
    c = np.zeros(dec.total)
    c[dec.slice_of("C1")] = box_moment_integral(value_basis, config.omega.box)
    prog.set_objective(c)

    sol = _solve_or_raise(prog, config.solver)
    C1 = sol.y[dec.slice_of("C1")]
    C2 = sol.y[dec.slice_of("C2")]
    K = _gain_from_map(ls1, C1, state.policy.m, len(policy_basis))
    K2 = _gain_from_map(ls2, C2, state.policy.m, len(policy_basis))
    info = dict(sol.info)
    # the second regression re-identifies the same gains; disagreement is a
    # data-quality diagnostic, not a constraint
    info["gain_consistency"] = float(np.linalg.norm(K - K2))
    info["cond"] = (ls1.cond, ls2.cond)
    mono_eig = None
    if "mono" in sol.grams and sol.grams["mono"].size:
        mono_eig = float(np.linalg.eigvalsh(sol.grams["mono"])[0])
    return IterationState(
        k=state.k + 1,
        V1=ValueFunction(value_basis, C1),
        V2=ValueFunction(value_basis, C2),
        policy=Policy(policy_basis, K),
        objective=sol.objective,
        dC1=float(np.linalg.norm(C1 - state.C1)),
        mono_gram_min_eig=mono_eig,
        solver_info=info,
    )


def run_fixed_aspiration_dd(
    sys: ControlAffineSystem,
    cost: CostSpec,
    delta_r: Polynomial,
    config: IterationConfig,
    seed: IterationState,
    probe: ProbeSpec,
    windows: DataWindows,
    x0_data: np.ndarray,
    bases,
) -> tuple[IterationState, int, list[IterationState]]:
    """Iterate to convergence under a fixed aspiration, collecting fresh
    probe data under each successive policy."""
    state = dataclasses.replace(seed, status="running")
    history: list[IterationState] = []
    for k in range(1, config.max_iters + 1):
        reg = simulate_collect(
            sys, state.policy, probe, windows, (state.V1, state.V2), cost, bases,
            x0_data, config.omega,
        )
        ls = build_ls_maps(reg)
        try:
            new = iterate_once_dd(state, ls, delta_r, config, bases)
        except SdpInfeasibleError:
            if not history:
                raise
            state.status = "infeasible"
            return state, k - 1, history
        history.append(new)
        converged = new.dC1 <= config.gamma and k >= 2
        state = new
        if converged:
            state.status = "converged"
            return state, k, history
    raise MaxItersExceededError(f"no convergence within {config.max_iters} iterations")


def run_dd(
    sys: ControlAffineSystem,
    cost: CostSpec,
    schedule: AspirationSchedule,
    config: IterationConfig,
    seed: IterationState,
    x0_data: np.ndarray,
    probe: ProbeSpec | None = None,
    windows: DataWindows | None = None,
    x0_eval: np.ndarray | None = None,
) -> ParetoSet:
    """Full data-driven sweep over shrinking aspirations.

    ``seed`` is a certified initial tuple (V1, V2, policy); each round
    restarts the iteration from it.
    """
    _vb, pb, dbar = config.resolve_bases(sys, cost, schedule.delta0)
    bases = iteration_bases(sys, config, dbar)
    if seed.policy.basis.entries != pb.entries:
        seed = dataclasses.replace(seed, policy=Policy(pb, _lift_gains(seed.policy, pb)))
    if probe is None:
        probe = ProbeSpec.for_policy(seed.policy, config.omega)
    if windows is None:
        q = default_window_count(sys, dbar)
        windows = DataWindows.uniform(round(q * 0.05, 10), q)

    records: list[ParetoRecord] = []
    log: list[dict] = []
    for r in range(schedule.rounds + 1):
        delta_r = schedule.delta(r)
        try:
            state, iters, history = run_fixed_aspiration_dd(
                sys, cost, delta_r, config, seed, probe, windows, x0_data, bases
            )
        except (SdpInfeasibleError, SeedingError, RankDeficiencyError):
            break  # aspiration too tight or data exhausted: sweep over
        for st in history:
            log.append({"round": r, "k": st.k, "objective": st.objective,
                        "dC1": st.dC1, "status": st.status})
        J1, J2 = evaluate_cost_pair(sys, cost, state.policy, config.omega, x0_eval)
        records.append(ParetoRecord(r, delta_r, state.policy, J1, J2, iters, state.V1, state.V2))
    if not records:
        raise EmptyParetoSetError("data-driven sweep produced no feasible record")
    return ParetoSet(records, log).filter_dominated()


def data_to_csv(reg: RegressionData, path) -> None:
    """Probe-experiment log: t, x1..xn, u1..um (commanded policy), e1..em."""
    if reg.traj_t is None:
        raise DataDrivenError("regression data carries no trajectory samples")
    n = reg.traj_x.shape[1]
    m = reg.traj_u.shape[1]
    header = ",".join(
        ["t"] + [f"x{i+1}" for i in range(n)] + [f"u{i+1}" for i in range(m)]
        + [f"e{i+1}" for i in range(m)]
    )
    arr = np.column_stack([reg.traj_t, reg.traj_x, reg.traj_u, reg.traj_e])
    np.savetxt(path, arr, delimiter=",", header=header, comments="")
