"""Problem data: control-affine systems, cost pairs, value functions,
policies, Hamiltonians, policy extraction and Pareto dominance."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import simkit
from .polyalg import (
    BasisTooSmallError,
    DimensionMismatchError,
    MonomialBasis,
    PolyMatrix,
    Polynomial,
    PolyVector,
    matvec,
    monomial_basis,
    poly_dot,
)
from .sosprog import POS_EPS, ConicSolver, check_sos


class ModelError(ValueError):
    pass


@dataclass
class Region:
    """Axis-aligned box Omega, must contain the origin strictly."""

    box: list[tuple[float, float]]

    def __post_init__(self):
        self.box = [(float(lo), float(hi)) for lo, hi in self.box]
        for lo, hi in self.box:
            if not (lo < 0.0 < hi):
                raise ModelError(f"box axis [{lo}, {hi}] does not strictly contain 0")

    @property
    def n(self):
        return len(self.box)

    def axis_extremes(self) -> np.ndarray:
        """The 2n points with one coordinate at its bound, others zero."""
        pts = []
        for j, (lo, hi) in enumerate(self.box):
            for v in (lo, hi):
                x = np.zeros(self.n)
                x[j] = v
                pts.append(x)
        return np.array(pts)

    def corner(self) -> np.ndarray:
        return np.array([hi for _, hi in self.box])

    def canonical_state(self) -> np.ndarray:
        """Deterministic interior point used for closed-loop cost pairs."""
        return 0.5 * self.corner()

    def sample_grid(self, count: int, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        lo = np.array([a for a, _ in self.box])
        hi = np.array([b for _, b in self.box])
        return lo + (hi - lo) * rng.random((count, self.n))

    def scaled(self, factor: float) -> "Region":
        return Region([(lo * factor, hi * factor) for lo, hi in self.box])

    def contains(self, x: np.ndarray) -> bool:
        return all(lo <= v <= hi for v, (lo, hi) in zip(x, self.box))


def _poly_list_deg(ps) -> int:
    return max((p.degree() for p in ps), default=0)


class ControlAffineSystem:
    """dx/dt = f(x) + g(x) u with polynomial f (n) and g (n x m)."""

    def __init__(self, f: PolyVector, g: PolyMatrix, name: str = ""):
        n = len(f)
        if n < 1:
            raise ModelError("empty dynamics")
        if any(p.n != n for p in f):
            raise DimensionMismatchError("f entries must live in n variables")
        if len(g) != n:
            raise DimensionMismatchError("g must have n rows")
        m = len(g[0])
        if any(len(row) != m for row in g) or any(p.n != n for row in g for p in row):
            raise DimensionMismatchError("g rows must share length and dimension")
        origin = np.zeros(n)
        if any(abs(p.eval(origin)) > 1e-12 for p in f):
            raise ModelError("f(0) != 0")
        self.n = n
        self.m = m
        self.f = list(f)
        self.g = [list(row) for row in g]
        self.name = name
        self._f_evals = [p.compile() for p in f]
        self._g_evals = [[p.compile() for p in row] for row in self.g]

    def f_eval(self, x: np.ndarray) -> np.ndarray:
        return np.array([fe(x) for fe in self._f_evals])

    def g_eval(self, x: np.ndarray) -> np.ndarray:
        return np.array([[ge(x) for ge in row] for row in self._g_evals])

    def deg_f(self) -> int:
        return _poly_list_deg(self.f)

    def deg_g(self) -> int:
        return max((p.degree() for row in self.g for p in row), default=0)


@dataclass
class CostSpec:
    """Running costs r_i = Q_i(x) + u^T R_i u for the two objectives."""

    Q1: Polynomial
    Q2: Polynomial
    R1: np.ndarray
    R2: np.ndarray

    def __post_init__(self):
        self.R1 = np.atleast_2d(np.asarray(self.R1, dtype=float))
        self.R2 = np.atleast_2d(np.asarray(self.R2, dtype=float))
        for name, R in (("R1", self.R1), ("R2", self.R2)):
            if not np.allclose(R, R.T):
                raise ModelError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(R)[0] <= 0:
                raise ModelError(f"{name} must be positive definite")

    def Q(self, i: int) -> Polynomial:
        return (self.Q1, self.Q2)[i - 1]

    def R(self, i: int) -> np.ndarray:
        return (self.R1, self.R2)[i - 1]

    def running_cost(self, i: int, x: np.ndarray, u: np.ndarray) -> float:
        return float(self.Q(i).eval(x) + u @ self.R(i) @ u)

    def validate_state_penalties(self, omega: Region, strict: bool = True,
                                 solver: ConicSolver | None = None) -> list[str]:
        """Q_i(0) = 0 plus a positivity check (SOS first, grid fallback).

        Returns a list of warnings; raises only under ``strict``.
        """
        warnings = []
        origin = np.zeros(omega.n)
        for name, q in (("Q1", self.Q1), ("Q2", self.Q2)):
            if abs(q.eval(origin)) > 1e-12:
                raise ModelError(f"{name}(0) != 0")
            if not check_positive_definite(q, omega, solver=solver):
                msg = f"{name} is not positive definite on the sample grid"
                if strict:
                    raise ModelError(msg)
                warnings.append(msg)
        return warnings


def check_positive_definite(p: Polynomial, omega: Region, grid: int = 512,
                            solver: ConicSolver | None = None) -> bool:
    """p > 0 away from the origin: SOS certificate of p - eps*|x|^2 first,
    dense grid evaluation as the fallback (necessary check only)."""
    sq = Polynomial.zero(p.n)
    for j in range(p.n):
        sq = sq + Polynomial.variable(p.n, j) ** 2
    try:
        if check_sos(p - POS_EPS * sq, solver).optimal:
            return True
    except Exception:
        pass
    pe = p.compile()
    pts = omega.sample_grid(grid, seed=7)
    pts = pts[np.linalg.norm(pts, axis=1) > 1e-6]
    return bool(np.all(np.asarray(pe(pts)) > 0.0))


@dataclass
class ValueFunction:
    """V(x) = coeffs . m(x) over a quadratic-and-up monomial vector."""

    basis: MonomialBasis
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (len(self.basis),):
            raise DimensionMismatchError(
                f"coefficients of shape {self.coeffs.shape}, expected ({len(self.basis)},)"
            )

    def poly(self) -> Polynomial:
        return self.basis.to_polynomial(self.coeffs)

    def eval(self, x) -> float:
        return float(self.basis.eval_vector(np.asarray(x, dtype=float)) @ self.coeffs)

    def gradient(self) -> PolyVector:
        return self.poly().gradient()


@dataclass
class Policy:
    """u(x) = K m(x) over a constant-free monomial vector (so u(0) = 0)."""

    basis: MonomialBasis
    gains: np.ndarray

    def __post_init__(self):
        self.gains = np.atleast_2d(np.asarray(self.gains, dtype=float))
        if self.gains.shape[1] != len(self.basis):
            raise DimensionMismatchError(
                f"gain matrix has {self.gains.shape[1]} columns, expected {len(self.basis)}"
            )
        if any(sum(e) == 0 for e in self.basis.entries):
            raise ModelError("policy basis must exclude the constant monomial")

    @property
    def m(self):
        return self.gains.shape[0]

    def eval(self, x) -> np.ndarray:
        return self.gains @ self.basis.eval_vector(np.asarray(x, dtype=float))

    def as_polyvector(self) -> PolyVector:
        out = []
        for row in self.gains:
            out.append(self.basis.to_polynomial(row))
        return out

    @classmethod
    def zero(cls, basis: MonomialBasis, m: int) -> "Policy":
        return cls(basis, np.zeros((m, len(basis))))

    @classmethod
    def linear(cls, K: np.ndarray, n: int, basis: MonomialBasis | None = None) -> "Policy":
        """Lift a linear state feedback u = K x onto a monomial basis."""
        K = np.atleast_2d(np.asarray(K, dtype=float))
        basis = basis or monomial_basis(n, 1, 1)
        gains = np.zeros((K.shape[0], len(basis)))
        for j in range(n):
            e = tuple(1 if i == j else 0 for i in range(n))
            gains[:, basis.index(e)] = K[:, j]
        return cls(basis, gains)


@dataclass
class AspirationSchedule:
    """Shrinking aspiration bound: delta_r = shrink^r * delta0."""

    delta0: Polynomial
    shrink: float = 0.5
    rounds: int = 5
    omega: Region | None = None

    def __post_init__(self):
        if not 0.0 < self.shrink < 1.0:
            raise ModelError(f"shrink factor must be in (0, 1), got {self.shrink}")
        if self.rounds < 0:
            raise ModelError("rounds must be >= 0")
        if self.omega is not None:
            pts = self.omega.sample_grid(256, seed=11)
            pts = pts[np.linalg.norm(pts, axis=1) > 1e-9]
            de = self.delta0.compile()
            if not np.all(np.asarray(de(pts)) > 0.0):
                raise ModelError("delta0 is not positive on the sample grid over Omega")

    def delta(self, r: int) -> Polynomial:
        return self.delta0 * (self.shrink**r)


def _policy_vector(u) -> PolyVector:
    if isinstance(u, Policy):
        return u.as_polyvector()
    return list(u)


def hamiltonian(sys: ControlAffineSystem, Q: Polynomial, R: np.ndarray, V, u) -> Polynomial:
    """H = Q + u^T R u + grad(V)^T (f + g u)."""
    uvec = _policy_vector(u)
    if len(uvec) != sys.m:
        raise DimensionMismatchError(f"policy has {len(uvec)} inputs, expected {sys.m}")
    gradV = V.gradient() if isinstance(V, (ValueFunction, Polynomial)) else list(V)
    R = np.atleast_2d(np.asarray(R, dtype=float))
    closed = [fi + gu for fi, gu in zip(sys.f, matvec(sys.g, uvec))]
    h = Q + poly_dot(gradV, closed)
    for i in range(sys.m):
        for j in range(sys.m):
            if R[i, j] != 0.0:
                h = h + R[i, j] * (uvec[i] * uvec[j])
    return h


def lyap_deficit(sys: ControlAffineSystem, Q: Polynomial, R: np.ndarray, V, u) -> Polynomial:
    """L = -grad(V)^T (f + g u) - r = -H; SOS membership of L encodes the
    HJB inequality."""
    return -hamiltonian(sys, Q, R, V, u)


def optimal_policy_vector(sys: ControlAffineSystem, R1: np.ndarray, V1) -> PolyVector:
    """Stationary-condition policy -1/2 R1^-1 g^T grad(V1), as polynomials."""
    gradV = V1.gradient() if isinstance(V1, (ValueFunction, Polynomial)) else list(V1)
    R1inv = np.linalg.inv(np.atleast_2d(np.asarray(R1, dtype=float)))
    gT_grad = []
    for j in range(sys.m):
        col = [sys.g[i][j] for i in range(sys.n)]
        gT_grad.append(poly_dot(col, gradV))
    out = []
    for i in range(sys.m):
        p = Polynomial.zero(sys.n)
        for j in range(sys.m):
            p = p + (-0.5 * R1inv[i, j]) * gT_grad[j]
        out.append(p)
    return out


def extract_policy(sys: ControlAffineSystem, R1: np.ndarray, V1,
                   target_basis: MonomialBasis) -> Policy:
    """Express the stationary-condition policy exactly in the target basis."""
    uvec = optimal_policy_vector(sys, R1, V1)
    gains = np.zeros((sys.m, len(target_basis)))
    for i, p in enumerate(uvec):
        try:
            gains[i] = target_basis.project(p)
        except BasisTooSmallError as exc:
            raise BasisTooSmallError(f"policy component {i}: {exc}") from exc
    return Policy(target_basis, gains)


def degree_bound(sys: ControlAffineSystem, cost: CostSpec, d: int, delta: Polynomial) -> int:
    """Smallest dbar with 2*dbar covering every constraint polynomial degree."""
    m = max(
        sys.deg_f() + 2 * d - 1,
        2 * sys.deg_g() + 2 * (2 * d - 1),
        cost.Q1.degree() + cost.Q2.degree(),
        delta.degree(),
    )
    return math.ceil(m / 2)


def pareto_dominates(J_a, J_b) -> bool:
    """a dominates b: componentwise <= with at least one strict <."""
    a = np.asarray(J_a, dtype=float)
    b = np.asarray(J_b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatchError("cost vectors of different shapes")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ModelError("cost vectors must be finite")
    return bool(np.all(a <= b) and np.any(a < b))


def is_admissible(sys: ControlAffineSystem, policy: Policy, omega: Region,
                  cost: CostSpec | None = None) -> bool:
    """Operational admissibility: u(0) = 0, closed-loop settling from the
    boundary of Omega, and finite running-cost integrals."""
    if np.any(np.abs(policy.eval(np.zeros(sys.n))) > 1e-12):
        return False
    ok, _margin = simkit.stability_probe(sys, policy, omega)
    if not ok:
        return False
    if cost is not None:
        cfg = simkit.IntegratorConfig(h=simkit.EVAL_STEP, T=simkit.SETTLE_HORIZON)
        for x0 in omega.axis_extremes():
            sim = simkit.simulate(sys, policy, x0, cfg)
            if sim.diverged:
                return False
            for i in (1, 2):
                if not np.isfinite(simkit.closed_loop_cost(sim, cost.Q(i), cost.R(i))):
                    return False
    return True
