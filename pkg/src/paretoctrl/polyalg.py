"""Sparse multivariate polynomial algebra.

Monomials are exponent tuples, polynomials are canonical sparse maps from
exponent tuple to float coefficient.  Monomial bases use a graded
lexicographic order (degree ascending, then lexicographic with x1 > x2 > ...)
so that coefficient vectors have a deterministic, prefix-extendable layout.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

# Coefficients smaller than this are dropped after arithmetic to keep the
# sparse representation canonical under floating-point roundoff.
TRIM_TOL = 1e-14

Expo = tuple[int, ...]


class PolyalgError(ValueError):
    pass


class DimensionMismatchError(PolyalgError):
    pass


class InvalidDegreeBoundsError(PolyalgError):
    pass


class DegenerateBoxError(PolyalgError):
    pass


def monomial_degree(expo: Expo) -> int:
    return sum(expo)


def _check_expo(expo: Sequence[int], n: int) -> Expo:
    e = tuple(int(v) for v in expo)
    if len(e) != n:
        raise DimensionMismatchError(f"exponent vector of length {len(e)}, expected {n}")
    if any(v < 0 for v in e):
        raise PolyalgError(f"negative exponent in {e}")
    return e


class Polynomial:
    """Sparse polynomial in n variables with float coefficients.

    Immutable after construction.  Zero coefficients are never stored.
    """

    __slots__ = ("n", "terms")

    def __init__(self, n: int, terms: Mapping[Sequence[int], float] | None = None):
        if n < 1:
            raise PolyalgError(f"dimension must be >= 1, got {n}")
        object.__setattr__(self, "n", int(n))
        clean: dict[Expo, float] = {}
        if terms:
            for expo, c in terms.items():
                c = float(c)
                if abs(c) < TRIM_TOL:
                    continue
                e = _check_expo(expo, n)
                clean[e] = clean.get(e, 0.0) + c
            clean = {e: c for e, c in clean.items() if abs(c) >= TRIM_TOL}
        object.__setattr__(self, "terms", clean)

    def __setattr__(self, *a):  # pragma: no cover - guard
        raise AttributeError("Polynomial is immutable")

    # -- constructors -------------------------------------------------

    @classmethod
    def zero(cls, n: int) -> "Polynomial":
        return cls(n)

    @classmethod
    def constant(cls, n: int, c: float) -> "Polynomial":
        return cls(n, {(0,) * n: c})

    @classmethod
    def variable(cls, n: int, j: int) -> "Polynomial":
        if not 0 <= j < n:
            raise PolyalgError(f"variable index {j} out of range for n={n}")
        e = [0] * n
        e[j] = 1
        return cls(n, {tuple(e): 1.0})

    @classmethod
    def monomial(cls, expo: Sequence[int], c: float = 1.0) -> "Polynomial":
        return cls(len(expo), {tuple(expo): c})

    # -- queries ------------------------------------------------------

    def is_zero(self) -> bool:
        return not self.terms

    def degree(self) -> int:
        """Total degree; 0 for the zero polynomial."""
        if not self.terms:
            return 0
        return max(monomial_degree(e) for e in self.terms)

    def min_degree(self) -> int:
        """Smallest total degree among stored terms; 0 for the zero polynomial."""
        if not self.terms:
            return 0
        return min(monomial_degree(e) for e in self.terms)

    def coefficient(self, expo: Sequence[int]) -> float:
        return self.terms.get(_check_expo(expo, self.n), 0.0)

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    # -- arithmetic ---------------------------------------------------

    def _require_same_n(self, other: "Polynomial") -> None:
        if self.n != other.n:
            raise DimensionMismatchError(f"dimensions differ: {self.n} vs {other.n}")

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.n, other)
        self._require_same_n(other)
        terms = dict(self.terms)
        for e, c in other.terms.items():
            terms[e] = terms.get(e, 0.0) + c
        return Polynomial(self.n, terms)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.n, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.n, other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return Polynomial(self.n, {e: c * other for e, c in self.terms.items()})
        self._require_same_n(other)
        terms: dict[Expo, float] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                terms[e] = terms.get(e, 0.0) + c1 * c2
        return Polynomial(self.n, terms)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if k < 0:
            raise PolyalgError("negative power")
        out = Polynomial.constant(self.n, 1.0)
        for _ in range(k):
            out = out * self
        return out

    def __eq__(self, other):
        return isinstance(other, Polynomial) and self.n == other.n and self.terms == other.terms

    def __hash__(self):
        return hash((self.n, frozenset(self.terms.items())))

    # -- calculus -----------------------------------------------------

    def diff(self, j: int) -> "Polynomial":
        terms: dict[Expo, float] = {}
        for e, c in self.terms.items():
            if e[j] == 0:
                continue
            d = list(e)
            k = d[j]
            d[j] = k - 1
            de = tuple(d)
            terms[de] = terms.get(de, 0.0) + c * k
        return Polynomial(self.n, terms)

    def gradient(self) -> list["Polynomial"]:
        return [self.diff(j) for j in range(self.n)]

    # -- evaluation ---------------------------------------------------

    def eval(self, x: Sequence[float]) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise DimensionMismatchError(f"point of shape {x.shape}, expected ({self.n},)")
        total = 0.0
        for e, c in self.terms.items():
            v = c
            for xi, ei in zip(x, e):
                if ei:
                    v *= xi**ei
            total += v
        return total

    def __call__(self, x):
        return self.eval(x)

    def compile(self) -> Callable[[np.ndarray], float | np.ndarray]:
        """Array-backed evaluator; accepts a point (n,) or a batch (k, n)."""
        if not self.terms:
            return lambda x: np.zeros(np.asarray(x).shape[:-1])[()] if np.asarray(x).ndim > 1 else 0.0
        E = np.array(list(self.terms.keys()), dtype=float)
        c = np.array(list(self.terms.values()))

        def _eval(x):
            x = np.asarray(x, dtype=float)
            if x.ndim == 1:
                return float(np.prod(x[None, :] ** E, axis=1) @ c)
            return np.prod(x[:, None, :] ** E[None, :, :], axis=2) @ c

        return _eval

    def __repr__(self):
        if not self.terms:
            return "Polynomial(0)"
        parts = []
        for e in sorted(self.terms, key=lambda e: (monomial_degree(e), tuple(-v for v in e))):
            mono = "*".join(f"x{j+1}^{k}" if k > 1 else f"x{j+1}" for j, k in enumerate(e) if k)
            parts.append(f"{self.terms[e]:+g}{'*' + mono if mono else ''}")
        return "Polynomial(" + " ".join(parts) + ")"


# Vectors/matrices of polynomials are plain (nested) lists.
PolyVector = list[Polynomial]
PolyMatrix = list[list[Polynomial]]


def poly_dot(a: Sequence[Polynomial], b: Sequence[Polynomial]) -> Polynomial:
    if len(a) != len(b):
        raise DimensionMismatchError(f"vector lengths differ: {len(a)} vs {len(b)}")
    out = Polynomial.zero(a[0].n)
    for p, q in zip(a, b):
        out = out + p * q
    return out


def matvec(g: PolyMatrix, u: Sequence[Polynomial]) -> PolyVector:
    """(n x m polynomial matrix) times (length-m polynomial vector)."""
    return [poly_dot(row, list(u)) for row in g]


def basis_count(n: int, d1: int, d2: int) -> int:
    """Number of monomials in n variables with degree in [d1, d2]."""
    return math.comb(n + d2, d2) - math.comb(n + d1 - 1, d1 - 1)


class MonomialBasis:
    """Ordered vector of monomials of degree d1..d2 in graded-lex order.

    ``complete`` marks the canonical full basis; restricted dictionaries
    (sub-vectors) share the interface but skip the cardinality invariant.
    """

    __slots__ = ("n", "d1", "d2", "entries", "complete", "_index", "_E")

    def __init__(self, n: int, d1: int, d2: int, entries: list[Expo], complete: bool):
        self.n = n
        self.d1 = d1
        self.d2 = d2
        self.entries = entries
        self.complete = complete
        self._index = {e: i for i, e in enumerate(entries)}
        self._E = np.array(entries, dtype=float).reshape(len(entries), n)
        if complete and len(entries) != basis_count(n, d1, d2):
            raise PolyalgError("basis cardinality does not match the binomial formula")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def index(self, expo: Expo) -> int:
        return self._index[expo]

    def __contains__(self, expo: Expo) -> bool:
        return expo in self._index

    def eval_vector(self, x: Sequence[float]) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise DimensionMismatchError(f"point of shape {x.shape}, expected ({self.n},)")
        return np.prod(x[None, :] ** self._E, axis=1)

    def eval_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.prod(X[:, None, :] ** self._E[None, :, :], axis=2)

    def gradient_polys(self) -> list[list[Polynomial]]:
        """Per-entry gradient, as a |basis| x n table of polynomials."""
        out = []
        for e in self.entries:
            out.append(Polynomial.monomial(e).gradient())
        return out

    def to_polynomial(self, coeffs: Sequence[float]) -> Polynomial:
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (len(self.entries),):
            raise DimensionMismatchError(
                f"coefficient vector of shape {coeffs.shape}, expected ({len(self.entries)},)"
            )
        return Polynomial(self.n, dict(zip(self.entries, coeffs)))

    def project(self, p: Polynomial) -> np.ndarray:
        """Coefficient vector of p in this basis; error if a term is missing."""
        if p.n != self.n:
            raise DimensionMismatchError(f"dimensions differ: {p.n} vs {self.n}")
        v = np.zeros(len(self.entries))
        for e, c in p.terms.items():
            if e not in self._index:
                raise BasisTooSmallError(f"monomial {e} not in basis")
            v[self._index[e]] = c
        return v

    def restricted(self, keep: Callable[[Expo], bool]) -> "MonomialBasis":
        return MonomialBasis(self.n, self.d1, self.d2, [e for e in self.entries if keep(e)], complete=False)

    def __repr__(self):
        kind = "" if self.complete else ", restricted"
        return f"MonomialBasis(n={self.n}, d1={self.d1}, d2={self.d2}, size={len(self)}{kind})"


class BasisTooSmallError(PolyalgError):
    pass


def _exponents_of_degree(n: int, d: int) -> Iterable[Expo]:
    if n == 1:
        yield (d,)
        return
    for first in range(d, -1, -1):
        for rest in _exponents_of_degree(n - 1, d - first):
            yield (first, *rest)


def monomial_basis(n: int, d1: int, d2: int) -> MonomialBasis:
    """Canonical ordered monomial basis of degrees d1..d2 in n variables."""
    if n < 1:
        raise PolyalgError(f"n must be >= 1, got {n}")
    if d1 < 1 or d2 < d1:
        raise InvalidDegreeBoundsError(f"need 1 <= d1 <= d2, got d1={d1}, d2={d2}")
    entries: list[Expo] = []
    for d in range(d1, d2 + 1):
        entries.extend(_exponents_of_degree(n, d))
    return MonomialBasis(n, d1, d2, entries, complete=True)


def gram_monomials(n: int, d1: int, d2: int) -> MonomialBasis:
    """Monomial vector for Gram parameterizations; allows d1 = 0 (constant)."""
    if d1 == 0:
        entries: list[Expo] = [(0,) * n]
        if d2 >= 1:
            entries.extend(monomial_basis(n, 1, d2).entries)
        return MonomialBasis(n, 1, max(d2, 1), entries, complete=False)
    return monomial_basis(n, d1, d2)


def box_moment_integral(basis: MonomialBasis, box: Sequence[Sequence[float]]) -> np.ndarray:
    """Vector of integrals of each basis monomial over an axis-aligned box."""
    box = [(float(lo), float(hi)) for lo, hi in box]
    if len(box) != basis.n:
        raise DimensionMismatchError(f"box has {len(box)} axes, expected {basis.n}")
    for lo, hi in box:
        if not lo < hi:
            raise DegenerateBoxError(f"degenerate axis [{lo}, {hi}]")
    out = np.empty(len(basis))
    for i, e in enumerate(basis.entries):
        v = 1.0
        for (lo, hi), k in zip(box, e):
            v *= (hi ** (k + 1) - lo ** (k + 1)) / (k + 1)
        out[i] = v
    return out


def poly_add(p: Polynomial, q: Polynomial) -> Polynomial:
    return p + q


def poly_mul(p: Polynomial, q: Polynomial) -> Polynomial:
    return p * q


def poly_scale(p: Polynomial, c: float) -> Polynomial:
    return p * c
