"""Transformations with analytic Jacobians and pulled-back coefficient fields.

A :class:`Transformation` bundles a point map with its Jacobian (and, when
available, its inverse).  Pulling back a coefficient field ``A`` through a
map ``phi`` gives the weight ``g = |det grad phi|`` and the matrix field
``a = (grad phi)^-1 A(phi) (grad phi)^-T``; the quadratic form
``int a grad u . grad u g dx`` on the reference domain is then unitarily
equivalent to the plain form on ``phi(Omega)``.

All callables take an ``(n, N)`` array of points and return stacked values.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import InterfaceError, MatrixDomainError, OutOfDomainError, SingularityError
from .geometry import CuspGeometry, _eps_of, _kink_term, h_eps, h_eps_grad

#: distance to the branch interface below which a Jacobian is refused
INTERFACE_TOL = 5e-14


@dataclass(frozen=True)
class Transformation:
    map: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    inverse: Optional[Callable[[np.ndarray], np.ndarray]] = None
    interface: Optional[Callable[[np.ndarray], np.ndarray]] = None
    dim: int = 2
    name: str = "map"
    domain_hint: str = ""

    def __call__(self, pts):
        return self.map(pts)

    def on_interface(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        if self.interface is None:
            return np.zeros(len(pts), dtype=bool)
        return self.interface(pts)


def _as_points(p, dim):
    pts = np.asarray(p, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != dim:
        raise ValueError(f"expected points with {dim} coordinates, got shape {pts.shape}")
    return pts, single


def affine(matrix, shift=None, name="affine") -> Transformation:
    """``x -> matrix @ x + shift``."""
    G = np.asarray(matrix, dtype=float)
    n = G.shape[0]
    b = np.zeros(n) if shift is None else np.asarray(shift, dtype=float)

    def fmap(p):
        pts, _ = _as_points(p, n)
        return pts @ G.T + b

    def jac(p):
        pts, _ = _as_points(p, n)
        return np.broadcast_to(G, (len(pts), n, n)).copy()

    def inv(p):
        pts, _ = _as_points(p, n)
        if abs(np.linalg.det(G)) <= 1e-300:
            raise SingularityError(f"{name} map is not invertible", point=pts[0])
        return (pts - b) @ np.linalg.inv(G).T

    return Transformation(fmap, jac, inverse=inv, dim=n, name=name)


def identity(dim: int = 2) -> Transformation:
    return affine(np.eye(dim), name="identity")


def dilation(factor: float, dim: int = 2) -> Transformation:
    return affine(factor * np.eye(dim), name=f"dilation({factor:g})")


def translation(v) -> Transformation:
    v = np.asarray(v, dtype=float)
    return affine(np.eye(len(v)), v, name="translation")


# --- the cusp map phi_eps -------------------------------------------------

def _phi_parts(pts, eps, geo: CuspGeometry, strict=True):
    a, e0 = geo.alpha, geo.eps0
    xbar, xn = pts[:, :-1], pts[:, -1]
    s = np.linalg.norm(xbar, axis=1)
    if strict:
        top = geo.top(s, e0)
        in_box = np.all(np.abs(xbar) < 1.0, axis=1)
        bad = in_box & (xn > top + 1e-12)
        if np.any(bad):
            raise OutOfDomainError(
                f"{int(bad.sum())} point(s) lie above the top of Omega_eps0, e.g. {pts[bad][0]}",
                points=pts[bad])
    band = (s < geo.cap_radius) & (np.abs(xn) < 1.0)
    h = np.full(len(pts), np.inf)
    if np.any(band):
        h[band] = h_eps(s[band], eps, geo)
    second = band & (xn >= h)
    return xbar, xn, s, h, second


def _second_branch_value(xbar_s, xn, h, eps, geo):
    a, e0 = geo.alpha, geo.eps0
    d = 1.0 - e0 - h
    J = 1.0 - e0 - xn
    m = _kink_term(xbar_s, eps, a)
    return -1.0 + 2.0 * e0 + 2.0 * xn - (d * d * J * J + m) ** (a / 2.0)


def phi_eps_map(p, level, geo: CuspGeometry):
    """Map Omega_eps0 onto Omega_eps; identity on Omega_hat_eps."""
    eps = _eps_of(level, geo)
    pts, single = _as_points(p, geo.dim)
    xbar, xn, s, h, second = _phi_parts(pts, eps, geo)
    out = pts.copy()
    if np.any(second):
        out[second, -1] = _second_branch_value(s[second], xn[second], h[second], eps, geo)
    return out[0] if single else out


def phi_eps_jacobian(p, level, geo: CuspGeometry, check_interface=True):
    """Analytic Jacobian of ``phi_eps``.

    On the moving branch the last row is
    ``d phi_N / d x_N = 2 + alpha J D^2 B^((alpha-2)/2)`` and
    ``d phi_N / d x_i = -(alpha/2) B^((alpha-2)/2) (-2 D J^2 dh/dx_i + dm/dx_i)``
    with ``D = 1 - eps0 - h_eps``, ``J = 1 - eps0 - x_N``,
    ``m = max(|xbar|^2, eps^(2/alpha))`` and ``B = D^2 J^2 + m``; ``dh/dx_i``
    comes from implicit differentiation of the profile equation.
    """
    eps = _eps_of(level, geo)
    a, e0 = geo.alpha, geo.eps0
    pts, single = _as_points(p, geo.dim)
    xbar, xn, s, h, second = _phi_parts(pts, eps, geo)
    if check_interface:
        near = np.isfinite(h) & (np.abs(xn - h) <= INTERFACE_TOL) & (h < 1.0 - e0)
        if np.any(near):
            raise InterfaceError(
                f"{int(near.sum())} point(s) on the branch interface x_N = h_eps(xbar)",
                points=pts[near])
    n, N = pts.shape
    jac = np.broadcast_to(np.eye(N), (n, N, N)).copy()
    if np.any(second):
        xs, ss, hs, xns = xbar[second], s[second], h[second], xn[second]
        d = 1.0 - e0 - hs
        J = 1.0 - e0 - xns
        m = _kink_term(ss, eps, a)
        B = d * d * J * J + m
        bp = B ** ((a - 2.0) / 2.0)
        dh = h_eps_grad(xs, eps, geo, h=hs)
        active = (ss * ss > eps ** (2.0 / a)).astype(float)
        dm = 2.0 * xs * active[:, None]
        row = -(0.5 * a) * bp[:, None] * (-2.0 * (d * J * J)[:, None] * dh + dm)
        jac[second, -1, :-1] = row
        jac[second, -1, -1] = 2.0 + a * J * d * d * bp
    return jac[0] if single else jac


def phi_eps_inverse(p, level, geo: CuspGeometry, iters: int = 80):
    """Inverse of ``phi_eps`` on Omega_eps; NaN rows for points outside it.

    On the moving branch ``x_N -> phi_N`` is increasing (its derivative is at
    least 2), so each column is inverted by bisection on ``[h_eps, 1 - eps0]``.
    """
    eps = _eps_of(level, geo)
    e0 = geo.eps0
    pts, single = _as_points(p, geo.dim)
    xbar, yn = pts[:, :-1], pts[:, -1]
    s = np.linalg.norm(xbar, axis=1)
    out = pts.copy()
    in_box = np.all(np.abs(pts) < 1.0, axis=1)
    above = in_box & (yn >= geo.top(s, eps))
    band = in_box & (s < geo.cap_radius) & ~above
    if np.any(band):
        hb = h_eps(s[band], eps, geo)
        move = yn[band] >= hb
        if np.any(move):
            idx = np.flatnonzero(band)[move]
            target = yn[idx]
            lo = hb[move].copy()
            hi = np.full(len(idx), 1.0 - e0)
            sm, hm = s[idx], hb[move]
            for _ in range(iters):
                if np.all(hi - lo <= 2.0 * np.finfo(float).eps):
                    break
                mid = 0.5 * (lo + hi)
                val = _second_branch_value(sm, mid, hm, eps, geo)
                below = val < target
                lo = np.where(below, mid, lo)
                hi = np.where(below, hi, mid)
            out[idx, -1] = 0.5 * (lo + hi)
    out[above] = np.nan
    return out[0] if single else out


def phi_eps(geo: CuspGeometry, level) -> Transformation:
    """The map ``phi_eps`` as a :class:`Transformation` on Omega_eps0."""
    eps = _eps_of(level, geo)

    def interface(pts):
        pts = np.atleast_2d(pts)
        _, xn, _, h, _ = _phi_parts(pts, eps, geo, strict=False)
        return np.isfinite(h) & (np.abs(xn - h) <= INTERFACE_TOL) & (h < 1.0 - geo.eps0)

    return Transformation(
        map=lambda p: phi_eps_map(p, eps, geo),
        jacobian=lambda p: phi_eps_jacobian(p, eps, geo),
        inverse=lambda p: phi_eps_inverse(p, eps, geo),
        interface=interface,
        dim=geo.dim,
        name=f"phi_eps({eps:g})",
        domain_hint="Omega_eps0",
    )


# --- coefficient fields ----------------------------------------------------

@dataclass(frozen=True)
class CoefficientField:
    """Base coefficients ``A(y)`` with ellipticity constant ``theta``."""

    A: Callable[[np.ndarray], np.ndarray]
    theta: float = 1.0
    dim: int = 2
    constant: bool = False

    @classmethod
    def identity(cls, dim: int = 2):
        I = np.eye(dim)
        return cls(lambda y: np.broadcast_to(I, (len(np.atleast_2d(y)), dim, dim)).copy(),
                   theta=1.0, dim=dim, constant=True)

    @classmethod
    def constant_matrix(cls, matrix):
        m = np.asarray(matrix, dtype=float)
        ev = np.linalg.eigvalsh(m)
        theta = max(ev.max(), 1.0 / ev.min())
        return cls(lambda y: np.broadcast_to(m, (len(np.atleast_2d(y)),) + m.shape).copy(),
                   theta=theta, dim=m.shape[0], constant=True)

    def check_ellipticity(self, pts, xis) -> bool:
        """``theta^-1 |xi|^2 <= xi.A xi <= theta |xi|^2`` at paired samples."""
        A = self.A(np.atleast_2d(pts))
        xis = np.atleast_2d(xis)
        q = np.einsum("ni,nij,nj->n", xis, A, xis)
        n2 = np.einsum("ni,ni->n", xis, xis)
        tol = 1e-12 * n2
        return bool(np.all(q >= n2 / self.theta - tol) and np.all(q <= self.theta * n2 + tol))


@dataclass(frozen=True)
class PullbackFields:
    """Weight ``g`` and matrix field ``a`` obtained by pulling ``A`` back through ``t``."""

    transformation: Transformation
    coefficients: CoefficientField

    def evaluate(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        G = self.transformation.jacobian(pts)
        det = np.linalg.det(G)
        bad = ~np.isfinite(det) | (np.abs(det) <= 1e-300)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise SingularityError(f"singular Jacobian at {pts[i]}", point=pts[i])
        Ginv = np.linalg.inv(G)
        c = self.coefficients
        A = c.A(pts) if c.constant else c.A(self.transformation.map(pts))
        a = Ginv @ A @ np.swapaxes(Ginv, 1, 2)
        a = 0.5 * (a + np.swapaxes(a, 1, 2))
        return np.abs(det), a

    def g(self, pts):
        return self.evaluate(pts)[0]

    def a(self, pts):
        return self.evaluate(pts)[1]


def pullback(t: Transformation, c: CoefficientField) -> PullbackFields:
    return PullbackFields(t, c)


def spd_sqrt(m, inverse: bool = False):
    """Principal square root (or its inverse) of a stack of SPD matrices."""
    m = np.asarray(m, dtype=float)
    single = m.ndim == 2
    ms = m[None] if single else m
    asym = np.abs(ms - np.swapaxes(ms, -1, -2)).max(axis=(-1, -2))
    scale = np.maximum(np.abs(ms).max(axis=(-1, -2)), 1e-300)
    if np.any(asym > 1e-12 * scale):
        raise MatrixDomainError("matrix is not symmetric")
    if ms.shape[-1] == 2:
        out = _sqrt_2x2(ms, inverse)
        return out[0] if single else out
    lam, V = np.linalg.eigh(ms)
    if np.any(lam <= 0):
        raise MatrixDomainError(f"matrix is not positive definite (min eigenvalue {lam.min():.3e})")
    r = lam ** (-0.5 if inverse else 0.5)
    out = (V * r[..., None, :]) @ np.swapaxes(V, -1, -2)
    out = 0.5 * (out + np.swapaxes(out, -1, -2))
    return out[0] if single else out


def _sqrt_2x2(ms, inverse):
    # sqrt(M) = (M + s I) / t with s = sqrt(det M), t = sqrt(tr M + 2 s); all terms positive
    a, b, d = ms[:, 0, 0], 0.5 * (ms[:, 0, 1] + ms[:, 1, 0]), ms[:, 1, 1]
    det = a * d - b * b
    if np.any(det <= 0) or np.any(a + d <= 0):
        raise MatrixDomainError(f"matrix is not positive definite (min determinant {det.min():.3e})")
    s = np.sqrt(det)
    t = np.sqrt(a + d + 2.0 * s)
    out = np.empty_like(ms)
    if inverse:
        # inverse of (M + s I) / t is (adj M + s I) / (s t)
        st = s * t
        out[:, 0, 0] = (d + s) / st
        out[:, 1, 1] = (a + s) / st
        out[:, 0, 1] = out[:, 1, 0] = -b / st
    else:
        out[:, 0, 0] = (a + s) / t
        out[:, 1, 1] = (d + s) / t
        out[:, 0, 1] = out[:, 1, 0] = b / t
    return out


@dataclass(frozen=True)
class PairFields:
    """``w = (g / g~)^(1/2)`` and ``S = w^-2 a^-1/2 a~ a^-1/2`` for a pair of pull-backs."""

    f: PullbackFields
    f_tilde: PullbackFields

    def evaluate(self, pts):
        """Return ``(w, S, g, a, same)``; ``same`` flags points where both pull-backs agree bitwise."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        g, a = self.f.evaluate(pts)
        gt, at = self.f_tilde.evaluate(pts)
        n, N = len(pts), a.shape[-1]
        same = (g == gt) & np.all(a == at, axis=(1, 2))
        w = np.sqrt(g / gt)
        S = np.broadcast_to(np.eye(N), (n, N, N)).copy()
        diff = ~same
        if np.any(diff):
            try:
                ainv_half = spd_sqrt(a[diff], inverse=True)
            except MatrixDomainError as exc:
                raise SingularityError(f"pulled-back matrix not SPD: {exc}") from exc
            Sd = ainv_half @ at[diff] @ ainv_half / (w[diff] ** 2)[:, None, None]
            S[diff] = 0.5 * (Sd + np.swapaxes(Sd, 1, 2))
        return w, S, g, a, same

    def w(self, pts):
        return self.evaluate(pts)[0]

    def S(self, pts):
        return self.evaluate(pts)[1]


def pair_fields(f: PullbackFields, f_tilde: PullbackFields) -> PairFields:
    return PairFields(f, f_tilde)
