"""Declarative SOS programs lowered to semidefinite programs.

An ``SosProgram`` holds a vector of free decision coefficients, a linear
objective, and constraints of the form "affine-in-decisions polynomial is a
sum of squares".  Each SOS constraint is Gram-parameterized: the polynomial
equals m(x)^T G m(x) for a PSD matrix G over a monomial vector m, which
turns into one PSD block plus coefficient-matching equalities.

Solving goes through a small conic-solver contract so external solvers can
be swapped in; the default backend is cvxopt's conelp.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .polyalg import (
    DimensionMismatchError,
    Expo,
    MonomialBasis,
    Polynomial,
    gram_monomials,
    monomial_degree,
)

FEAS_TOL = 1e-7
PSD_TOL = 1e-7
CERT_TOL = 1e-6
# strict positivity margin used when encoding "positive definite" as
# p - POS_EPS * sum(x_j^2) in SOS
POS_EPS = 1e-6


class SosProgError(ValueError):
    pass


class OddDegreeError(SosProgError):
    pass


class CertificateError(SosProgError):
    pass


class SolverFailure(RuntimeError):
    """Numerical failure inside the conic solver."""

    def __init__(self, msg, info=None):
        super().__init__(msg)
        self.info = info or {}


# ---------------------------------------------------------------------------
# program building blocks


class DecisionVector:
    """Named blocks of scalar decision variables."""

    def __init__(self, blocks: list[tuple[str, int]]):
        names = [b[0] for b in blocks]
        if len(set(names)) != len(names):
            raise SosProgError("duplicate decision block names")
        if any(size <= 0 for _, size in blocks):
            raise SosProgError("decision block sizes must be positive")
        self.blocks = [(name, int(size)) for name, size in blocks]
        self._offsets = {}
        off = 0
        for name, size in self.blocks:
            self._offsets[name] = off
            off += size
        self.total = off

    def slice_of(self, name: str) -> slice:
        off = self._offsets[name]
        size = dict(self.blocks)[name]
        return slice(off, off + size)

    def index(self, name: str, i: int) -> int:
        return self._offsets[name] + i


class AffinePoly:
    """base(x) + sum_j y_j * sens_j(x), affine in the decision vector y."""

    def __init__(self, base: Polynomial, sens: dict[int, Polynomial] | None = None):
        self.base = base
        self.sens = {int(j): p for j, p in (sens or {}).items() if not p.is_zero()}
        for p in self.sens.values():
            if p.n != base.n:
                raise DimensionMismatchError("sensitivity dimension differs from base")

    @property
    def n(self):
        return self.base.n

    def at(self, y: np.ndarray) -> Polynomial:
        out = self.base
        for j, p in self.sens.items():
            out = out + float(y[j]) * p
        return out

    def degree_range(self) -> tuple[int, int]:
        polys = [self.base, *self.sens.values()]
        polys = [p for p in polys if not p.is_zero()]
        if not polys:
            return (0, 0)
        return (min(p.min_degree() for p in polys), max(p.degree() for p in polys))

    def monomials(self) -> set[Expo]:
        out: set[Expo] = set(self.base.terms)
        for p in self.sens.values():
            out.update(p.terms)
        return out


@dataclass
class SosConstraint:
    name: str
    expr: AffinePoly
    gram_basis: MonomialBasis | None = None


@dataclass
class LinearEquality:
    coeffs: dict[int, float]
    rhs: float


class SosProgram:
    def __init__(self, decisions: DecisionVector):
        self.decisions = decisions
        self.objective = np.zeros(decisions.total)
        self.constraints: list[SosConstraint] = []
        self.equalities: list[LinearEquality] = []

    def set_objective(self, c: np.ndarray) -> None:
        c = np.asarray(c, dtype=float)
        if c.shape != (self.decisions.total,):
            raise SosProgError(f"objective of shape {c.shape}, expected ({self.decisions.total},)")
        self.objective = c

    def add_sos(self, name: str, expr: AffinePoly, gram_basis: MonomialBasis | None = None) -> None:
        self.constraints.append(SosConstraint(name, expr, gram_basis))

    def add_equality(self, coeffs: dict[int, float], rhs: float) -> None:
        self.equalities.append(LinearEquality(dict(coeffs), float(rhs)))


# ---------------------------------------------------------------------------
# Gram parameterization and compilation


def default_gram_basis(expr: AffinePoly) -> MonomialBasis:
    """Full monomial vector of half the constraint's degree range."""
    dmin, dmax = expr.degree_range()
    if dmax == 0:
        return gram_monomials(expr.n, 0, 0)
    if dmax % 2 == 1:
        base_deg = expr.base.degree()
        sens_deg = max((p.degree() for p in expr.sens.values()), default=0)
        if base_deg == dmax and sens_deg < dmax:
            raise OddDegreeError(
                f"constraint has odd leading degree {dmax} for every decision assignment"
            )
    return gram_monomials(expr.n, dmin // 2, math.ceil(dmax / 2))


def gram_parameterize(c: SosConstraint):
    """Return (gram basis, matching rows).

    Each row is (monomial, [(i, j, weight) gram entries], {dec index: coeff},
    base coeff) encoding  sum_ij w*G_ij - sum_j coeff*y_j = base.
    """
    basis = c.gram_basis or default_gram_basis(c.expr)
    s = len(basis)
    products: dict[Expo, list[tuple[int, int, float]]] = {}
    for i in range(s):
        for j in range(i, s):
            mu = tuple(a + b for a, b in zip(basis.entries[i], basis.entries[j]))
            w = 1.0 if i == j else 2.0
            products.setdefault(mu, []).append((i, j, w))
    monos = set(products) | c.expr.monomials()
    rows = []
    for mu in sorted(monos, key=lambda e: (monomial_degree(e), tuple(-v for v in e))):
        gram_entries = products.get(mu, [])
        dec = {j: p.terms[mu] for j, p in c.expr.sens.items() if mu in p.terms}
        base = c.expr.base.terms.get(mu, 0.0)
        if not gram_entries and not dec and base == 0.0:
            continue
        rows.append((mu, gram_entries, dec, base))
    return basis, rows


@dataclass
class PsdBlock:
    name: str
    size: int
    offset: int  # start of this block's triangle variables within z
    basis: MonomialBasis


@dataclass
class SdpProblem:
    """min c^T z  s.t.  A z = b,  each Gram block (read from z) is PSD.

    z = [decisions; upper-triangle entries of each Gram matrix, row-major].
    """

    ny: int
    nz: int
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    blocks: list[PsdBlock]
    constraint_names: list[str] = field(default_factory=list)

    def gram_of(self, z: np.ndarray, block: PsdBlock) -> np.ndarray:
        s = block.size
        G = np.zeros((s, s))
        k = block.offset
        for i in range(s):
            for j in range(i, s):
                G[i, j] = G[j, i] = z[k]
                k += 1
        return G


@dataclass
class SdpSolution:
    status: str  # optimal | infeasible | numerical-failure
    y: np.ndarray | None
    grams: dict[str, np.ndarray]
    objective: float | None
    residual: float
    min_gram_eig: float
    info: dict
    problem: SdpProblem | None = None

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def compile_program(prog: SosProgram) -> SdpProblem:
    """Lower an SOS program to conic standard form (deterministic layout)."""
    ny = prog.decisions.total
    blocks: list[PsdBlock] = []
    off = ny
    parts = []
    for con in prog.constraints:
        basis, rows = gram_parameterize(con)
        blocks.append(PsdBlock(con.name, len(basis), off, basis))
        parts.append((con, basis, rows))
        off += len(basis) * (len(basis) + 1) // 2
    nz = off

    arows: list[int] = []
    acols: list[int] = []
    avals: list[float] = []
    b: list[float] = []
    r = 0
    for (con, basis, rows), block in zip(parts, blocks):
        s = block.size

        def tri(i, j):
            # index of (i, j), i <= j, within the row-major upper triangle
            return block.offset + i * s - i * (i - 1) // 2 + (j - i)

        for mu, gram_entries, dec, base in rows:
            for i, j, w in gram_entries:
                arows.append(r)
                acols.append(tri(i, j))
                avals.append(w)
            for jdec, coeff in dec.items():
                arows.append(r)
                acols.append(jdec)
                avals.append(-coeff)
            b.append(base)
            r += 1
    for eq in prog.equalities:
        for j, coeff in eq.coeffs.items():
            arows.append(r)
            acols.append(j)
            avals.append(coeff)
        b.append(eq.rhs)
        r += 1

    A = sp.csr_matrix((avals, (arows, acols)), shape=(r, nz))
    c = np.zeros(nz)
    c[:ny] = prog.objective
    return SdpProblem(
        ny=ny,
        nz=nz,
        c=c,
        A=A,
        b=np.array(b),
        blocks=blocks,
        constraint_names=[con.name for con in prog.constraints],
    )


def export_triplets(sdp: SdpProblem) -> str:
    """Plain-text dump: objective, equality triplets, rhs, PSD block layout."""
    lines = [f"nz {sdp.nz}", f"ny {sdp.ny}"]
    for blk in sdp.blocks:
        lines.append(f"psd {blk.name} offset {blk.offset} size {blk.size}")
    for j in np.nonzero(sdp.c)[0]:
        lines.append(f"obj {j} {sdp.c[j]:.17g}")
    coo = sdp.A.tocoo()
    for r, cidx, v in zip(coo.row, coo.col, coo.data):
        lines.append(f"eq {r} {cidx} {v:.17g}")
    for r, v in enumerate(sdp.b):
        if v != 0.0:
            lines.append(f"rhs {r} {v:.17g}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# conic solver contract


class ConicSolver(ABC):
    """Abstract conic solver for problems in SdpProblem standard form."""

    @abstractmethod
    def solve_conic(self, sdp: SdpProblem) -> tuple[str, np.ndarray | None, dict]:
        """Return (raw status, z or None, info).

        Raw status is one of 'optimal', 'infeasible', 'unbounded', 'unknown'.
        """


class CvxoptConeSolver(ConicSolver):
    """Default backend on cvxopt's conelp interior-point solver."""

    def __init__(self, maxiters: int = 200, feastol: float = 1e-8):
        self.maxiters = maxiters
        self.feastol = feastol

    @staticmethod
    def _reduce_equalities(A: sp.csr_matrix, b: np.ndarray):
        """Equilibrated, full-row-rank copy of the equality system.

        conelp requires Rank(A) = #rows; facial reduction and pinning can
        leave many linearly dependent rows.  Returns (A2, b2) or None when
        the system is inconsistent (the program is trivially infeasible).
        """
        Ad = A.toarray()
        scales = np.ones(Ad.shape[0])
        for i in range(Ad.shape[0]):
            m = np.max(np.abs(Ad[i]))
            if m > 0.0:
                scales[i] = 1.0 / m
        Ad = Ad * scales[:, None]
        bs = b * scales
        if Ad.shape[0] == 0:
            return sp.csr_matrix(Ad), bs
        _q, R, piv = scipy.linalg.qr(Ad.T, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        tol = max(Ad.shape) * np.finfo(float).eps * (diag[0] if len(diag) else 0.0)
        rank = int(np.sum(diag > tol))
        keep = np.sort(piv[:rank])
        z, res, *_ = np.linalg.lstsq(Ad, bs, rcond=None)
        if np.max(np.abs(Ad @ z - bs), initial=0.0) > 1e-8:
            return None  # equalities inconsistent on their own
        return sp.csr_matrix(Ad[keep]), bs[keep]

    def solve_conic(self, sdp: SdpProblem):
        from cvxopt import matrix, solvers, spmatrix

        grows, gcols, gvals = [], [], []
        dims = {"l": 0, "q": [], "s": []}
        row0 = 0
        for blk in sdp.blocks:
            s = blk.size
            if s == 0:
                continue
            dims["s"].append(s)
            k = blk.offset
            for i in range(s):
                for j in range(i, s):
                    # slack matrix equals the Gram matrix: s = -G z with G = -E_ij
                    grows.append(row0 + j * s + i)
                    gcols.append(k)
                    gvals.append(-1.0)
                    if i != j:
                        grows.append(row0 + i * s + j)
                        gcols.append(k)
                        gvals.append(-1.0)
                    k += 1
            row0 += s * s
        if not dims["s"]:
            # degenerate: pure LP; give conelp a vacuous nonnegative slack
            dims["l"] = 1
            grows, gcols, gvals = [0], [0], [0.0]
            row0 = 1
        G = spmatrix(gvals, grows, gcols, (row0, sdp.nz))
        h = matrix(np.zeros(row0))
        reduced = self._reduce_equalities(sdp.A, sdp.b)
        if reduced is None:
            return "infeasible", None, {"error": "inconsistent equality rows"}
        A2, b2 = reduced
        coo = A2.tocoo()
        A = spmatrix(coo.data.tolist(), coo.row.tolist(), coo.col.tolist(), A2.shape)
        b = matrix(b2)
        c = matrix(sdp.c)
        opts = {
            "show_progress": False,
            "maxiters": self.maxiters,
            "feastol": self.feastol,
        }
        old = dict(solvers.options)
        solvers.options.update(opts)
        try:
            sol = solvers.conelp(c, G, h, dims, A, b, kktsolver="ldl")
        except (ValueError, ArithmeticError, ZeroDivisionError) as exc:
            return "unknown", None, {"error": str(exc)}
        finally:
            solvers.options.clear()
            solvers.options.update(old)
        info = {
            "iterations": sol.get("iterations"),
            "primal objective": sol.get("primal objective"),
            "dual objective": sol.get("dual objective"),
            "gap": sol.get("gap"),
        }
        status = sol["status"]
        if status == "optimal":
            return "optimal", np.array(sol["x"]).ravel(), info
        if status == "primal infeasible":
            info["certificate"] = {
                "z": None if sol["z"] is None else np.array(sol["z"]).ravel(),
                "y": None if sol["y"] is None else np.array(sol["y"]).ravel(),
            }
            return "infeasible", None, info
        if status == "dual infeasible":
            return "unbounded", None, info
        return "unknown", None, info


_DEFAULT_SOLVER: ConicSolver | None = None


def default_solver() -> ConicSolver:
    global _DEFAULT_SOLVER
    if _DEFAULT_SOLVER is None:
        _DEFAULT_SOLVER = CvxoptConeSolver()
    return _DEFAULT_SOLVER


def solve(sdp: SdpProblem, solver: ConicSolver | None = None) -> SdpSolution:
    """Solve a compiled SDP and validate tolerances on the returned point."""
    solver = solver or default_solver()
    status, z, info = solver.solve_conic(sdp)
    if status == "infeasible":
        return SdpSolution("infeasible", None, {}, None, math.inf, -math.inf, info, sdp)
    if status in ("unbounded", "unknown") or z is None:
        return SdpSolution("numerical-failure", None, {}, None, math.inf, -math.inf, info, sdp)

    resid = 0.0
    if sdp.A.shape[0]:
        scale = max(1.0, float(np.max(np.abs(sdp.b))) if len(sdp.b) else 1.0)
        resid = float(np.max(np.abs(sdp.A @ z - sdp.b))) / scale
    grams = {}
    min_eig = math.inf
    for blk in sdp.blocks:
        if blk.size == 0:
            grams[blk.name] = np.zeros((0, 0))
            continue
        G = sdp.gram_of(z, blk)
        grams[blk.name] = G
        min_eig = min(min_eig, float(np.linalg.eigvalsh(G)[0]))
    if min_eig is math.inf:
        min_eig = 0.0
    ok = resid < FEAS_TOL and min_eig > -PSD_TOL
    return SdpSolution(
        "optimal" if ok else "numerical-failure",
        z[: sdp.ny].copy(),
        grams,
        float(sdp.c @ z),
        resid,
        min_eig,
        info,
        sdp,
    )


# ---------------------------------------------------------------------------
# certificates and convenience checks


def extract_certificate(
    sol: SdpSolution, constraint_name: str, expr: AffinePoly | None = None
) -> list[Polynomial]:
    """Square-root polynomials p_i with sum p_i^2 reconstructing the constraint."""
    if not sol.optimal:
        raise CertificateError("certificate requested on a non-optimal solution")
    if constraint_name not in sol.grams:
        raise KeyError(constraint_name)
    block = next(blk for blk in sol.problem.blocks if blk.name == constraint_name)
    G = sol.grams[constraint_name]
    if G.size == 0:
        return []
    w, V = np.linalg.eigh(G)
    w = np.where(w < PSD_TOL, 0.0, w)
    polys = []
    for lam, v in zip(w[::-1], V.T[::-1]):
        if lam == 0.0:
            continue
        polys.append(math.sqrt(lam) * block.basis.to_polynomial(v))
    if expr is not None:
        target = expr.at(sol.y)
        recon = Polynomial.zero(target.n)
        for p in polys:
            recon = recon + p * p
        err = (recon - target).max_abs_coeff()
        if err > CERT_TOL:
            raise CertificateError(f"certificate reconstruction residual {err:.3e} > {CERT_TOL}")
    return polys


def check_sos(p: Polynomial, solver: ConicSolver | None = None) -> SdpSolution:
    """SOS feasibility of a fixed polynomial (no decision variables)."""
    dec = DecisionVector([("_slack", 1)])
    prog = SosProgram(dec)
    # dummy decision kept out of the constraint; objective pins it to zero
    prog.add_equality({0: 1.0}, 0.0)
    prog.add_sos("p", AffinePoly(p))
    return solve(compile_program(prog), solver)


def gram_min_eig(sol: SdpSolution, name: str) -> float:
    G = sol.grams[name]
    if G.size == 0:
        return 0.0
    return float(np.linalg.eigvalsh(G)[0])
