"""SOS program construction, SDP compilation, and certificates."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paretoctrl.polyalg import MonomialBasis, Polynomial, monomial_basis
from paretoctrl.sosprog import (
    CERT_TOL,
    AffinePoly,
    CertificateError,
    DecisionVector,
    OddDegreeError,
    SosProgError,
    SosProgram,
    check_sos,
    compile_program,
    default_gram_basis,
    export_triplets,
    extract_certificate,
    gram_min_eig,
    solve,
)

RNG = np.random.default_rng(41)


def random_square(n, d, rng, terms=4):
    """Sum of a few squared random polynomials of degree <= d."""
    out = Polynomial.zero(n)
    for _ in range(terms):
        q = Polynomial.constant(n, float(rng.normal()))
        b = monomial_basis(n, 1, d)
        coeffs = rng.normal(size=len(b))
        for e, c in zip(b.entries, coeffs):
            q = q + Polynomial.monomial(e, float(c))
        out = out + q * q
    return out


class TestDecisionVector:
    def test_layout(self):
        dec = DecisionVector([("a", 3), ("b", 2)])
        assert dec.total == 5
        assert dec.slice_of("b") == slice(3, 5)
        assert dec.index("b", 1) == 4

    def test_duplicate_names_rejected(self):
        with pytest.raises(SosProgError):
            DecisionVector([("a", 1), ("a", 2)])


class TestAffinePoly:
    def test_at(self):
        x = Polynomial.variable(1, 0)
        ap = AffinePoly(x**2, {0: x, 1: Polynomial.constant(1, 1.0)})
        p = ap.at(np.array([2.0, -1.0]))
        assert p.eval([3.0]) == pytest.approx(9.0 + 6.0 - 1.0)

    def test_degree_range(self):
        x = Polynomial.variable(1, 0)
        ap = AffinePoly(x**4, {0: x**2})
        assert ap.degree_range() == (2, 4)

    def test_zero_sensitivities_dropped(self):
        x = Polynomial.variable(1, 0)
        ap = AffinePoly(x, {0: Polynomial.zero(1)})
        assert ap.sens == {}


class TestCheckSos:
    def test_simple_squares(self):
        x, y = (Polynomial.variable(2, j) for j in range(2))
        assert check_sos(x**2 + y**2).optimal
        assert check_sos((x * y - 1.0) ** 2).optimal
        assert check_sos(Polynomial.constant(2, 1.0)).optimal

    def test_negative_and_indefinite(self):
        x, y = (Polynomial.variable(2, j) for j in range(2))
        assert check_sos(-(x**2)).status == "infeasible"
        assert check_sos(x * y).status == "infeasible"

    def test_motzkin_not_sos(self):
        # nonnegative everywhere (AM-GM) yet admits no SOS decomposition
        x, y = (Polynomial.variable(2, j) for j in range(2))
        motzkin = x**4 * y**2 + x**2 * y**4 - 3.0 * x**2 * y**2 + 1.0
        assert check_sos(motzkin).status == "infeasible"

    def test_odd_degree_rejected(self):
        x = Polynomial.variable(1, 0)
        with pytest.raises(OddDegreeError):
            check_sos(x**3 + 1.0)

    def test_random_squares_certified(self):
        for _ in range(10):
            p = random_square(2, 2, RNG)
            sol = check_sos(p)
            assert sol.optimal
            polys = extract_certificate(sol, "p", AffinePoly(p))
            recon = Polynomial.zero(2)
            for q in polys:
                recon = recon + q * q
            assert (recon - p).max_abs_coeff() <= CERT_TOL

    def test_certificate_on_failed_solve_raises(self):
        x = Polynomial.variable(1, 0)
        sol = check_sos(-(x**2))
        with pytest.raises(CertificateError):
            extract_certificate(sol, "p")


class TestPrograms:
    def test_minimal_shift_recovers_global_min(self):
        # min c subject to x^2 - 2x + c SOS  ->  c = 1 (complete the square)
        x = Polynomial.variable(1, 0)
        dec = DecisionVector([("c", 1)])
        prog = SosProgram(dec)
        obj = np.zeros(1)
        obj[0] = 1.0
        prog.set_objective(obj)
        prog.add_sos("shifted", AffinePoly(x**2 - 2.0 * x, {0: Polynomial.constant(1, 1.0)}))
        sol = solve(compile_program(prog))
        assert sol.optimal
        assert sol.y[0] == pytest.approx(1.0, abs=1e-6)

    def test_equality_constraints(self):
        # pin c = 5; x^2 + c stays SOS
        x = Polynomial.variable(1, 0)
        dec = DecisionVector([("c", 1)])
        prog = SosProgram(dec)
        prog.add_sos("p", AffinePoly(x**2, {0: Polynomial.constant(1, 1.0)}))
        prog.add_equality({0: 1.0}, 5.0)
        sol = solve(compile_program(prog))
        assert sol.optimal
        assert sol.y[0] == pytest.approx(5.0, abs=1e-7)

    def test_solution_tolerances(self):
        x = Polynomial.variable(1, 0)
        sol = check_sos((x - 1.0) ** 2)
        assert sol.residual <= 1e-7
        assert sol.min_gram_eig >= -1e-7
        assert gram_min_eig(sol, "p") == sol.min_gram_eig

    def test_compile_layout(self):
        x = Polynomial.variable(1, 0)
        dec = DecisionVector([("c", 2)])
        prog = SosProgram(dec)
        prog.add_sos("p", AffinePoly(x**2, {0: Polynomial.constant(1, 1.0)}))
        sdp = compile_program(prog)
        assert sdp.ny == 2
        blk = sdp.blocks[0]
        assert blk.offset == 2
        assert sdp.nz == 2 + blk.size * (blk.size + 1) // 2
        text = export_triplets(sdp)
        assert text.startswith("nz ")
        assert f"psd p offset {blk.offset} size {blk.size}" in text


class TestGramBasis:
    def test_default_halves_degree_span(self):
        x = Polynomial.variable(1, 0)
        gb = default_gram_basis(AffinePoly(x**2 + x**4))
        assert all(1 <= sum(e) <= 2 for e in gb.entries)

    def test_constant_term_included_when_needed(self):
        x = Polynomial.variable(1, 0)
        gb = default_gram_basis(AffinePoly(x**2 + 1.0))
        assert (0,) in gb.entries

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.1, 3.0), st.floats(-2.0, 2.0))
    def test_scaled_shifted_square_always_sos(self, a, b):
        x = Polynomial.variable(1, 0)
        assert check_sos(a * (x - b) ** 2).optimal
