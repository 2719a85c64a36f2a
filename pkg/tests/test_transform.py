import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cusp_spectra.errors import InterfaceError, MatrixDomainError, OutOfDomainError, SingularityError
from cusp_spectra.geometry import CuspGeometry, c_alpha, h_eps
from cusp_spectra.transform import (CoefficientField, affine, dilation, identity, pair_fields, phi_eps,
                                    phi_eps_inverse, phi_eps_jacobian, phi_eps_map, pullback, spd_sqrt,
                                    translation)

GEO = CuspGeometry(0.9, 0.2)


def cusp_points(rng, n, lo=0.3):
    x = rng.uniform(-1.2, 1.2, n) * GEO.cap_radius
    y = rng.uniform(lo, 1.0, n) * GEO.top(np.abs(x), GEO.eps0)
    return np.column_stack([x, y])


def test_phi_at_eps0_is_identity():
    p = cusp_points(np.random.default_rng(0), 300)
    np.testing.assert_array_equal(phi_eps_map(p, GEO.eps0, GEO), p)


def test_phi_fixes_hat_region():
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, 200) * GEO.cap_radius
    h = h_eps(np.abs(x), 0.05, GEO)
    p = np.column_stack([x, h * rng.uniform(0.2, 0.999, 200)])
    np.testing.assert_array_equal(phi_eps_map(p, 0.05, GEO), p)
    np.testing.assert_array_equal(phi_eps_jacobian(p, 0.05, GEO), np.broadcast_to(np.eye(2), (200, 2, 2)))


@pytest.mark.parametrize("eps", [0.0, 0.01, 0.1])
def test_phi_on_flat_top(eps):
    x = np.linspace(-0.99, 0.99, 21) * GEO.cap_radius
    p = np.column_stack([x, np.full_like(x, 1 - GEO.eps0)])
    want = 1 - np.maximum(np.abs(x) ** 0.9, eps)
    np.testing.assert_allclose(phi_eps_map(p, eps, GEO)[:, 1], want, atol=1e-12)


def test_top_boundary_maps_to_top():
    x = np.linspace(-1.5, 1.5, 61) * GEO.cap_radius
    for eps in (0.0, 0.03, 0.12):
        top0 = GEO.top(np.abs(x), GEO.eps0)
        img = phi_eps_map(np.column_stack([x, top0]), eps, GEO)
        np.testing.assert_allclose(img[:, 1], GEO.top(np.abs(x), eps), atol=1e-12)


def test_continuity_across_interface():
    x = np.linspace(0, 0.95, 11) * GEO.cap_radius
    for eps in (0.0, 0.05, 0.15):
        h = h_eps(x, eps, GEO)
        below = phi_eps_map(np.column_stack([x, h - 1e-13]), eps, GEO)[:, 1]
        above = phi_eps_map(np.column_stack([x, h + 1e-13]), eps, GEO)[:, 1]
        np.testing.assert_allclose(above, below, atol=1e-10)


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(2)
    d = 1e-6
    for eps in rng.uniform(0, 0.2, 10):
        p = cusp_points(rng, 100)
        h = h_eps(np.abs(p[:, 0]), eps, GEO)
        ok = ((np.abs(p[:, 1] - h) > 1e-4) & (np.abs(np.abs(p[:, 0]) - eps ** (1 / 0.9)) > 1e-4)
              & (np.abs(np.abs(p[:, 0]) - GEO.cap_radius) > 1e-4)
              & (p[:, 1] < GEO.top(np.abs(p[:, 0]), GEO.eps0) - 1e-4))
        p = p[ok]
        jac = phi_eps_jacobian(p, eps, GEO)
        for j in range(2):
            e = np.zeros(2)
            e[j] = d
            fd = (phi_eps_map(p + e, eps, GEO) - phi_eps_map(p - e, eps, GEO)) / (2 * d)
            err = np.abs(fd - jac[:, :, j]).max(axis=1) / np.abs(jac).max(axis=(1, 2))
            assert err.max() < 1e-6


def test_det_at_least_one_and_ratio_bound():
    rng = np.random.default_rng(3)
    bound = 2 / c_alpha(0.9) ** 2
    for _ in range(20):
        eps = rng.uniform(0, 0.2)
        eps_lo = rng.uniform(0, eps)
        p = cusp_points(rng, 100, lo=0.7)
        hi = np.linalg.det(phi_eps_jacobian(p, eps, GEO))
        lo = np.linalg.det(phi_eps_jacobian(p, eps_lo, GEO))
        assert hi.min() >= 1 and lo.min() >= 1
        assert (hi / lo).max() <= bound


def test_inverse_round_trip():
    rng = np.random.default_rng(4)
    p = cusp_points(rng, 300)
    for eps in (0.0, 0.04, 0.15):
        back = phi_eps_inverse(phi_eps_map(p, eps, GEO), eps, GEO)
        np.testing.assert_allclose(back, p, atol=1e-12)


def test_domain_and_interface_errors():
    with pytest.raises(OutOfDomainError):
        phi_eps_map(np.array([0.0, 0.9]), 0.1, GEO)
    h = h_eps(np.array([0.0]), 0.1, GEO)[0]
    with pytest.raises(InterfaceError):
        phi_eps_jacobian(np.array([0.0, h]), 0.1, GEO)
    assert phi_eps(GEO, 0.1).on_interface(np.array([[0.0, h], [0.0, 0.0]])).tolist() == [True, False]


def test_pullback_identity_and_dilation():
    pts = np.random.default_rng(5).uniform(0, 1, (50, 2))
    g, a = pullback(identity(), CoefficientField.identity()).evaluate(pts)
    np.testing.assert_array_equal(g, 1.0)
    np.testing.assert_array_equal(a, np.broadcast_to(np.eye(2), (50, 2, 2)))
    g, a = pullback(dilation(2.0), CoefficientField.identity()).evaluate(pts)
    np.testing.assert_allclose(g, 4.0, rtol=1e-15)
    np.testing.assert_allclose(a, np.broadcast_to(0.25 * np.eye(2), (50, 2, 2)), rtol=1e-15)


def test_pullback_of_phi_is_spd():
    rng = np.random.default_rng(6)
    p = cusp_points(rng, 1000)
    g, a = pullback(phi_eps(GEO, 0.03), CoefficientField.identity()).evaluate(p)
    assert np.all(g >= 1)
    np.testing.assert_array_equal(a, np.swapaxes(a, 1, 2))
    assert np.linalg.eigvalsh(a).min() > 0
    xi = rng.standard_normal((1000, 2))
    assert np.all(np.einsum("ni,nij,nj->n", xi, a, xi) > 0)


def test_singular_jacobian_rejected():
    f = pullback(affine([[1.0, 0.0], [2.0, 0.0]]), CoefficientField.identity())
    with pytest.raises(SingularityError):
        f.evaluate(np.array([[0.3, 0.3]]))


def test_pair_fields_cases():
    pts = np.random.default_rng(7).uniform(0, 1, (30, 2))
    f = pullback(identity(), CoefficientField.identity())
    w, S, *_ = pair_fields(f, f).evaluate(pts)
    np.testing.assert_array_equal(w, 1.0)
    np.testing.assert_array_equal(S, np.broadcast_to(np.eye(2), (30, 2, 2)))
    # dilation by 2 with A = 4 I: g = 4, a = I
    big = pullback(dilation(2.0), CoefficientField.constant_matrix(4 * np.eye(2)))
    w, S, *_ = pair_fields(big, f).evaluate(pts)
    np.testing.assert_allclose(w, 2.0, rtol=1e-15)
    np.testing.assert_allclose(S, np.broadcast_to(0.25 * np.eye(2), (30, 2, 2)), rtol=1e-15)


def test_pair_fields_generic_symmetric_and_cocycle():
    rng = np.random.default_rng(8)
    p = cusp_points(rng, 500, lo=0.7)
    f0, f1, f2 = (pullback(phi_eps(GEO, e), CoefficientField.identity()) for e in (0.2, 0.08, 0.01))
    w02, S, *_ = pair_fields(f0, f2).evaluate(p)
    assert np.abs(S - np.swapaxes(S, 1, 2)).max() <= 1e-12
    w01 = pair_fields(f0, f1).evaluate(p)[0]
    w12 = pair_fields(f1, f2).evaluate(p)[0]
    np.testing.assert_allclose(w02, w01 * w12, rtol=1e-14)


def test_spd_sqrt():
    np.testing.assert_array_equal(spd_sqrt(np.eye(2)), np.eye(2))
    np.testing.assert_allclose(spd_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), rtol=1e-15)
    with pytest.raises(MatrixDomainError):
        spd_sqrt(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(MatrixDomainError):
        spd_sqrt(np.diag([1.0, -1.0]))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_spd_sqrt_squares_back(seed):
    rng = np.random.default_rng(seed)
    b = rng.standard_normal((3, 3))
    m = b @ b.T + 0.5 * np.eye(3)
    r = spd_sqrt(m)
    assert np.abs(r @ r - m).max() <= 1e-12 * max(1.0, np.abs(m).max())


def test_translation_and_affine():
    t = translation([0.5, -1.0])
    np.testing.assert_array_equal(t(np.array([[1.0, 1.0]])), [[1.5, 0.0]])
    np.testing.assert_array_equal(t.jacobian(np.zeros((1, 2)))[0], np.eye(2))
