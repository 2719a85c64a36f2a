import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from cusp_spectra.assembly import DIRICHLET, NEUMANN, assemble
from cusp_spectra.eigensolve import EigenDecomposition, solve_lowest
from cusp_spectra.errors import ClusterError, FitError, HypothesisError, InputError
from cusp_spectra.experiments import analytic_square
from cusp_spectra.mesh import mesh_rectangle
from cusp_spectra.metrics import (HOLDS, PRECONDITION_VIOLATED, QuadratureContext, b_alpha,
                                  bootstrap_sequence, eigenfunction_distance, fit_rate, n_alpha,
                                  projector_check, projector_ensemble, property_p_fit, rate_exponent, rho,
                                  schatten_distance, tau, weyl_constant, weyl_tail)
from cusp_spectra.transform import CoefficientField, dilation, identity, pullback

LAPLACE = pullback(identity(), CoefficientField.identity())

# --- Schatten ------------------------------------------------------------------------


def test_schatten_trivial_cases():
    lam = analytic_square(10)
    assert schatten_distance(lam, lam, 2).value == 0.0
    assert schatten_distance([0.0], [1.0], 1).value == 0.5


def test_schatten_scaled_square():
    lam, lam_t = analytic_square(200), analytic_square(200, 0.9)
    direct = 0.0
    for a, b in zip(sorted(math.pi ** 2 * (m * m + n * n) for m in range(1, 30) for n in range(1, 30))[:200],
                    sorted(math.pi ** 2 * (m * m + n * n) / 0.81 for m in range(1, 30) for n in range(1, 30))[:200]):
        direct += ((b + 1) ** -2 - (a + 1) ** -2) ** 2
    sd = schatten_distance(lam, lam_t, 2)
    assert sd.value == pytest.approx(math.sqrt(direct), rel=1e-13)
    assert sd.sufficient


def test_weyl_tail_bounds_sum():
    c, n, k = 3.0, 50, 2
    direct = 2 * sum((c * m + 1.0) ** (-2 * k) for m in range(n + 1, 200000))
    tail = weyl_tail(c, n, k)
    assert direct <= tail <= 1.2 * direct
    assert weyl_constant([1.0, 2.0, 3.0, 8.0]) == pytest.approx(min(3 / 3, 8 / 4))


def test_schatten_input_errors():
    with pytest.raises(InputError):
        schatten_distance([1.0, 2.0], [1.0], 1)
    with pytest.raises(InputError):
        schatten_distance([2.0, 1.0], [1.0, 2.0], 1)
    with pytest.raises(InputError):
        schatten_distance([1.0], [1.0], 0)


spectra = st.lists(st.floats(0, 1e4), min_size=3, max_size=12)


@settings(max_examples=200, deadline=None)
@given(st.integers(3, 12).flatmap(lambda n: st.tuples(*[st.lists(st.floats(0, 1e4), min_size=n, max_size=n)] * 3)),
       st.integers(1, 4))
def test_schatten_is_metric(triple, k):
    a, b, c = (sorted(x) for x in triple)
    d = lambda x, y: schatten_distance(x, y, k).value  # noqa: E731
    assert d(a, b) == pytest.approx(d(b, a), abs=0)
    assert d(a, c) <= d(a, b) + d(b, c) + 1e-15

# --- projector lemma ---------------------------------------------------------------------


def test_projector_identical():
    A = np.diag([1.0, 2.0, 5.0])
    r = projector_check(A, A, 2.0)
    assert r.distance == 0.0 and r.verdict == HOLDS and r.minmax_ok


def test_projector_hand_case():
    r = projector_check(np.diag([1.0, 2.0]), np.diag([1.1, 2.0]), 1.0)
    assert r.distance == 0.0
    assert r.gap == 1.0
    assert r.bound == pytest.approx(0.4, rel=1e-14)
    assert r.verdict == HOLDS


def test_projector_invariants():
    rng = np.random.default_rng(3)
    U, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    A = (U * np.array([1.0, 1.0, 3.0, 4.0, 6.0, 7.0])) @ U.T
    E = rng.standard_normal((6, 6))
    B = A + 0.05 * (E + E.T)
    r = projector_check(A, B, 1.0)
    for P in (r.P, r.Q):
        assert np.abs(P @ P - P).max() < 1e-12
        assert np.abs(P - P.T).max() < 1e-12
        assert round(np.trace(P)) == 2
    assert r.cluster == (0, 1)


def test_projector_precondition():
    r = projector_check(np.diag([1.0, 2.0]), np.diag([2.0, 1.0]) + 0.5, 1.0)
    assert r.verdict == PRECONDITION_VIOLATED


def test_projector_not_eigenvalue():
    with pytest.raises(InputError):
        projector_check(np.eye(2), np.eye(2), 3.0)


def test_projector_ensemble_small():
    rep = projector_ensemble(500, 12, seed=11)
    assert rep.violations == 0 and rep.minmax_violations == 0 and rep.admissible > 300
    again = projector_ensemble(500, 12, seed=11)
    np.testing.assert_array_equal(rep.ratios, again.ratios)

# --- eigenfunctions ----------------------------------------------------------------------


@pytest.fixture(scope="module")
def square_dec():
    m = mesh_rectangle(nx=48)
    return m, solve_lowest(assemble(m, LAPLACE, DIRICHLET, 3), 6)


def test_eigenfunction_self_and_sign(square_dec):
    m, dec = square_dec
    t = identity()
    ctx = QuadratureContext(m, t, t, 3)
    assert eigenfunction_distance(dec, dec, [0], ctx) == 0.0
    # separate map objects go through the interpolation path
    assert eigenfunction_distance(dec, dec, [0], QuadratureContext(m, t, identity(), 3)) < 1e-12
    flipped = EigenDecomposition(dec.lambdas, -dec.vectors, dec.residuals, dec.dof_map, dec.n_nodes)
    assert eigenfunction_distance(dec, flipped, [0], ctx) == 0.0


def test_eigenfunction_scaled_square(square_dec):
    m, dec = square_dec
    s = 1.05
    dec_t = solve_lowest(assemble(m, pullback(dilation(s), CoefficientField.identity()), DIRICHLET, 3), 6)
    ctx = QuadratureContext(m, identity(), dilation(s), 7)
    got = eigenfunction_distance(dec, dec_t, [0], ctx)
    overlap = quad(lambda x: math.sin(math.pi * x) * math.sin(math.pi * x / s), 0, 1, epsabs=1e-14)[0]
    exact = math.sqrt(2 - 2 * (4 / s) * overlap ** 2)
    assert got == pytest.approx(exact, rel=0.02)


def test_cluster_projector_invariant_under_rotation(square_dec):
    m, dec = square_dec
    lam = dec.lambdas.copy()
    lam[2] = lam[1]  # treat the split pair as one eigenspace
    base = EigenDecomposition(lam, dec.vectors, dec.residuals, dec.dof_map, dec.n_nodes)
    th = 0.7
    R = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    vec = dec.vectors.copy()
    vec[1:3] = R @ vec[1:3]
    mixed = EigenDecomposition(lam, vec, dec.residuals, dec.dof_map, dec.n_nodes)
    ctx = QuadratureContext(m, identity(), identity(), 3)
    assert eigenfunction_distance(base, mixed, [1, 2], ctx) < 1e-6
    with pytest.raises(ClusterError):
        eigenfunction_distance(base, mixed, [1], ctx)

# --- fitting -------------------------------------------------------------------------------


def test_fit_rate_exact():
    x = np.geomspace(1e-3, 1, 6)
    f = fit_rate(x, x ** 0.4)
    assert f.slope == pytest.approx(0.4, abs=1e-12) and f.r2 == pytest.approx(1.0, abs=1e-12)
    g = fit_rate(x, 3 * x)
    assert g.slope == pytest.approx(1.0, abs=1e-12) and g.intercept == pytest.approx(math.log(3), abs=1e-12)


def test_fit_rate_noisy():
    rng = np.random.default_rng(5)
    x = np.geomspace(1e-4, 1e-1, 8)
    y = 2.0 * x ** 0.7 * (1 + 0.01 * rng.standard_normal(8))
    assert fit_rate(x, y).slope == pytest.approx(0.7, abs=0.02)


def test_fit_rate_errors():
    with pytest.raises(FitError):
        fit_rate([1, 2], [1, 2])
    with pytest.raises(FitError):
        fit_rate([1, 2, 3], [1, 0, 2])

# --- property (P) --------------------------------------------------------------------------


def test_property_p_neumann_excludes_zero():
    m = mesh_rectangle(nx=32)
    dec = solve_lowest(assemble(m, LAPLACE, NEUMANN, 3), 12)
    fit = property_p_fit(dec, m, LAPLACE, math.inf, 3)
    assert fit.used == 11
    with pytest.raises(InputError):
        property_p_fit(solve_lowest(assemble(m, LAPLACE, NEUMANN, 3), 10), m, LAPLACE, math.inf, 3)


def test_property_p_square_recorded():
    m = mesh_rectangle(nx=48)
    dec = solve_lowest(assemble(m, LAPLACE, DIRICHLET, 3), 20)
    fit = property_p_fit(dec, m, LAPLACE, math.inf, 3)
    # sup norms of sine products stay bounded, so the growth exponent is small
    assert fit.gamma1_hat <= 2 / 4 + 0.15
    fit6 = property_p_fit(dec, m, LAPLACE, 6.0, 3)
    assert np.isfinite(fit6.gamma1_hat) and np.isfinite(fit6.gamma2_hat)

# --- exponent calculus ---------------------------------------------------------------------


def test_b_alpha_values():
    assert b_alpha(2, 1.0) == 0.5 and b_alpha(5, 1.0) == 0.5
    assert b_alpha(2, 0.95) == pytest.approx(0.5 - 0.25 / 1.95, abs=1e-15)
    assert rate_exponent(2, 0.95).b_alpha == pytest.approx(0.3717948717948718, abs=1e-15)


def test_b_alpha_monotone_and_continuous():
    for N in (2, 3, 4):
        a = np.linspace(1 - N / 15 + 1e-6, 1 - 1e-9, 400)
        b = np.array([rate_exponent(N, x).b_alpha for x in a])
        assert np.all(np.diff(b) > 0)
        assert abs(b[-1] - 0.5) < 1e-7
        assert np.all((b > 0) & (b <= 0.5))


def test_exponent_table():
    t = rate_exponent(2, 0.95)
    assert t.N_alpha == pytest.approx(2 + 1 / 0.95 - 1)
    assert t.gamma_min == pytest.approx(t.N_alpha / 4)
    assert t.q0_max == pytest.approx(1.95 / 0.05)
    assert t.N_alpha >= 2
    assert (t.q0_max > 14) == (0.95 > 1 - 2 / 15)


@settings(max_examples=100, deadline=None)
@given(st.floats(1.01, 20), st.floats(1.01, 200), st.floats(0.87, 0.999))
def test_tau_reduction(p, q, alpha):
    M = n_alpha(2, alpha)
    assert tau(2, (0, 0), M, p, q, alpha) == pytest.approx((M / 2) * (1 / p - 1 / q), rel=1e-12, abs=1e-15)
    assert rate_exponent(2, alpha).tau_at(2, (0, 0), p, q) == pytest.approx((M / 2) * (1 / p - 1 / q), abs=1e-15)


def test_rho_closed_form():
    M, m, p0, a = n_alpha(2, 0.95), 2, 2.0, 0.95
    beta = (1, 0)
    want = (M / p0 + 1) / m
    assert p0 <= M / (m - 1)
    assert rho(m, beta, M, p0, a) == pytest.approx(want, rel=1e-12)


def test_bootstrap_sequence_reaches_p0():
    seq = bootstrap_sequence(50.0, 2.0, n_alpha(2, 0.95), 2)
    assert seq[0] == 50.0 and seq[-1] == 2.0
    assert all(b < a for a, b in zip(seq, seq[1:]))


def test_alpha_range_rejected():
    for N, a in ((2, 1 - 2 / 15), (2, 0.5), (2, 1.0), (3, 0.75)):
        with pytest.raises(HypothesisError, match="1 - N/15"):
            rate_exponent(N, a)
    with pytest.raises(InputError):
        b_alpha(2, 1.5)
