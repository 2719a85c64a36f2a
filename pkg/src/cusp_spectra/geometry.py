"""Cusp domain family and Lipschitz graph domains.

The cusp domain Omega coincides inside the open box ]-1,1[^N with the region
under ``x_N = 1 - |xbar|**alpha``.  Cutting the tip at height ``1 - eps``
gives the Lipschitz domain Omega_eps.  The reference domain used by the
pull-back machinery is Omega_eps0; Omega_hat_eps is the part of it that the
map ``phi_eps`` leaves untouched, bounded above by the implicit profile
``h_eps``.

Everything here is vectorised over the leading axis of point arrays and is a
pure function of immutable parameter objects.
"""
from __future__ import annotations

import hashlib
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from matplotlib.path import Path as _PolyPath

from .errors import (
    BracketError,
    DomainError,
    HypothesisError,
    InvalidDomainError,
    UnsupportedDimensionError,
)

#: residual tolerance for the implicit profile root
H_TOL = 1e-12


@dataclass(frozen=True)
class CuspGeometry:
    """Parameters of the cusp domain family.

    ``closure`` lists the vertices of the polyline that closes the boundary
    outside the box, walked from ``(1, 0)`` back to ``(-1, 0)``.  The default
    makes Omega the part of the box under the cusp profile.
    """

    alpha: float
    eps0: float
    dim: int = 2
    closure: tuple[tuple[float, float], ...] = ((1.0, -1.0), (-1.0, -1.0))

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise DomainError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0.0 < self.eps0 < 0.5:
            raise DomainError(f"eps0 must lie in (0, 1/2), got {self.eps0}")
        if self.dim < 2:
            raise DomainError(f"dim must be >= 2, got {self.dim}")
        object.__setattr__(self, "closure", tuple(tuple(map(float, p)) for p in self.closure))
        for p in self.closure:
            if abs(p[0]) < 1.0 and abs(p[1]) < 1.0:
                raise InvalidDomainError(f"closure vertex {p} lies inside the open box")

    @property
    def cap_radius(self) -> float:
        """|xbar| beyond which h_eps equals the cusp profile."""
        return self.eps0 ** (1.0 / self.alpha)

    def level(self, eps: float) -> "EpsLevel":
        return EpsLevel(eps, self.eps0)

    def check_rate_hypothesis(self):
        lo = 1.0 - self.dim / 15.0
        if not lo < self.alpha < 1.0:
            raise HypothesisError(
                f"rate statements need alpha in (1 - N/15, 1) = ({lo:.6g}, 1), got {self.alpha}")

    def check_lemma_hypotheses(self):
        if not (self.alpha > 0.5 and self.eps0 <= 0.25):
            raise HypothesisError(
                f"determinant ratio bound needs alpha > 1/2 and eps0 <= 1/4, "
                f"got alpha={self.alpha}, eps0={self.eps0}")

    def top(self, xbar_norm, eps: float):
        """Upper boundary ``min(1 - eps, 1 - |xbar|**alpha)`` of Omega_eps."""
        s = np.asarray(xbar_norm, dtype=float)
        return np.minimum(1.0 - eps, 1.0 - s ** self.alpha)

    def closure_polygon(self) -> np.ndarray:
        return np.array([(1.0, 0.0), *self.closure, (-1.0, 0.0)])


@dataclass(frozen=True)
class EpsLevel:
    eps: float
    eps0: float | None = None

    def __post_init__(self):
        if self.eps < 0.0:
            raise DomainError(f"eps must be non-negative, got {self.eps}")
        if self.eps0 is not None and self.eps > self.eps0:
            raise DomainError(f"eps={self.eps} exceeds eps0={self.eps0}")


def _eps_of(level, geo: CuspGeometry) -> float:
    eps = level.eps if isinstance(level, EpsLevel) else float(level)
    if not 0.0 <= eps <= geo.eps0:
        raise DomainError(f"eps={eps} outside [0, eps0={geo.eps0}]")
    return eps


def c_alpha(alpha: float) -> float:
    """Lower bracket constant ``1 - 2**(1 - 2 alpha)``; positive iff alpha > 1/2."""
    if not 0.5 < alpha <= 1.0:
        raise DomainError(f"C_alpha needs alpha in (1/2, 1], got {alpha}")
    return 1.0 - 1.0 / 2.0 ** (2.0 * alpha - 1.0)


def _kink_term(s, eps, alpha):
    # max{|xbar|^2, eps^(2/alpha)}
    return np.maximum(s * s, eps ** (2.0 / alpha))


def h_residual(h, xbar_norm, level, geo: CuspGeometry):
    """``h - RHS`` of the implicit profile equation."""
    eps = _eps_of(level, geo)
    a, e0 = geo.alpha, geo.eps0
    d = 1.0 - e0 - np.asarray(h, dtype=float)
    m = _kink_term(np.asarray(xbar_norm, dtype=float), eps, a)
    return np.asarray(h) - (1.0 - 2.0 * e0 + (d ** 4 + m) ** (a / 2.0))


def h_bracket(xbar_norm, level, geo: CuspGeometry):
    """Bounds on ``1 - eps0 - h_eps`` from the two-sided estimate.

    Returns ``(lo, hi)`` with ``C_alpha (eps0 - mx) <= 1 - eps0 - h <= eps0 - mx``
    where ``mx = max(|xbar|**alpha, eps)``.
    """
    eps = _eps_of(level, geo)
    s = np.asarray(xbar_norm, dtype=float)
    mx = np.maximum(s ** geo.alpha, eps)
    hi = geo.eps0 - mx
    return c_alpha(geo.alpha) * hi, hi


_H_CACHE: OrderedDict = OrderedDict()
_H_CACHE_SIZE = 64
_H_LOCK = threading.Lock()


def h_eps(xbar_norm, level, geo: CuspGeometry, tol: float = H_TOL):
    """Implicit upper profile of Omega_hat_eps (see :func:`_h_eps`).

    The same quadrature points are evaluated many times per run, so results
    for large arrays are memoised on the exact input bytes.
    """
    s = np.asarray(xbar_norm, dtype=float)
    if s.size < 256:
        return _h_eps(s, level, geo, tol)
    key = (geo.alpha, geo.eps0, _eps_of(level, geo), tol, s.shape,
           hashlib.blake2b(np.ascontiguousarray(s).tobytes(), digest_size=16).digest())
    with _H_LOCK:
        hit = _H_CACHE.get(key)
        if hit is not None:
            _H_CACHE.move_to_end(key)
            return hit.copy()
    out = _h_eps(s, level, geo, tol)
    with _H_LOCK:
        _H_CACHE[key] = out.copy()
        while len(_H_CACHE) > _H_CACHE_SIZE:
            _H_CACHE.popitem(last=False)
    return out


def _h_eps(xbar_norm, level, geo: CuspGeometry, tol: float = H_TOL):
    """Implicit upper profile of Omega_hat_eps.

    Outside the cap radius ``eps0**(1/alpha)`` the profile is the cusp curve
    ``1 - |xbar|**alpha``.  Inside it the root of the implicit equation is
    found by bisection on the bracket returned by :func:`h_bracket`, until the
    residual is below ``tol``.
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    eps = _eps_of(level, geo)
    a, e0 = geo.alpha, geo.eps0
    s = np.asarray(xbar_norm, dtype=float)
    scalar = s.ndim == 0
    s = np.atleast_1d(s)
    if np.any(s < 0):
        raise DomainError("xbar_norm must be non-negative")
    out = 1.0 - s ** a
    inner = s < geo.cap_radius
    if np.any(inner):
        si = s[inner]
        m = _kink_term(si, eps, a)
        lo, hi = h_bracket(si, eps, geo)
        lo = np.maximum(lo, 0.0)
        hi = np.maximum(hi, 0.0)

        # r(D) = eps0 - D - (D^4 + m)^(alpha/2), strictly decreasing in D
        def r(d):
            return e0 - d - (d ** 4 + m) ** (a / 2.0)

        r_lo, r_hi = r(lo), r(hi)
        slack = 4.0 * np.finfo(float).eps
        bad = (r_lo < -slack) | (r_hi > slack)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise BracketError(
                f"implicit profile bracket has no sign change at |xbar|={float(si[i])!r} "
                f"(alpha={a}, eps0={e0}, eps={eps}): r(lo)={r_lo[i]:.3e}, r(hi)={r_hi[i]:.3e}",
                lower=lo[i], upper=hi[i])
        # |r'| <= 1 + 2 alpha, so a width below tol/3 pins the residual
        width_tol = tol / 3.0
        for _ in range(200):
            if np.all(hi - lo <= width_tol):
                break
            mid = 0.5 * (lo + hi)
            pos = r(mid) >= 0.0
            lo = np.where(pos, mid, lo)
            hi = np.where(pos, hi, mid)
        d = 0.5 * (lo + hi)
        # exact endpoint when the bracket collapses (eps = eps0)
        d = np.where(lo == hi, lo, d)
        out[inner] = (1.0 - e0) - d
    return float(out[0]) if scalar else out


def h_eps_grad(xbar, level, geo: CuspGeometry, h=None):
    """Gradient of h_eps with respect to xbar, by implicit differentiation.

    ``xbar`` has shape ``(n, N-1)``.  Inside the cap radius the kink term
    contributes ``2 xbar`` only where ``|xbar| > eps**(1/alpha)``.
    """
    eps = _eps_of(level, geo)
    a, e0 = geo.alpha, geo.eps0
    xbar = np.atleast_2d(np.asarray(xbar, dtype=float))
    s = np.linalg.norm(xbar, axis=1)
    if h is None:
        h = h_eps(s, eps, geo)
    h = np.atleast_1d(h)
    grad = np.empty_like(xbar)
    outer = s >= geo.cap_radius
    # profile 1 - s^alpha
    with np.errstate(divide="ignore", invalid="ignore"):
        grad[outer] = -a * (s[outer] ** (a - 2.0))[:, None] * xbar[outer]
    inner = ~outer
    if np.any(inner):
        si, xi = s[inner], xbar[inner]
        d = 1.0 - e0 - h[inner]
        m = _kink_term(si, eps, a)
        fpow = (d ** 4 + m) ** ((a - 2.0) / 2.0)
        active = (si * si > eps ** (2.0 / a)).astype(float)
        dm = 2.0 * xi * active[:, None]
        grad[inner] = (0.5 * a * fpow / (1.0 + 2.0 * a * d ** 3 * fpow))[:, None] * dm
    return grad


@dataclass(frozen=True)
class Region:
    """One of Omega, Omega_eps or Omega_hat_eps."""

    kind: str
    eps: float = 0.0

    @classmethod
    def omega(cls):
        return cls("omega")

    @classmethod
    def omega_eps(cls, eps):
        return cls("omega_eps", float(getattr(eps, "eps", eps)))

    @classmethod
    def omega_hat_eps(cls, eps):
        return cls("omega_hat_eps", float(getattr(eps, "eps", eps)))

    def __post_init__(self):
        if self.kind not in ("omega", "omega_eps", "omega_hat_eps"):
            raise DomainError(f"unknown region kind {self.kind!r}")


def membership(p, region: Region, geo: CuspGeometry):
    """Exact membership predicate for Omega, Omega_eps, Omega_hat_eps.

    ``p`` is a single point or an ``(n, N)`` array.  Outside the open box all
    three regions agree with Omega, whose boundary there is the closure
    polyline.
    """
    pts = np.asarray(p, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != geo.dim:
        raise DomainError(f"points must have {geo.dim} coordinates")
    xbar, xn = pts[:, :-1], pts[:, -1]
    s = np.linalg.norm(xbar, axis=1)
    in_box = np.all(np.abs(pts) < 1.0, axis=1)
    res = np.zeros(len(pts), dtype=bool)

    if region.kind == "omega":
        upper = 1.0 - s ** geo.alpha
    elif region.kind == "omega_eps":
        upper = geo.top(s, _eps_of(region.eps, geo))
    else:
        upper = np.full(len(pts), -np.inf)
        if np.any(in_box):
            upper[in_box] = h_eps(s[in_box], region.eps, geo)
    res[in_box] = xn[in_box] < upper[in_box]

    out = ~in_box
    if np.any(out):
        if geo.dim != 2:
            raise UnsupportedDimensionError("closure polyline is only defined for N = 2")
        poly = _PolyPath(geo.closure_polygon())
        res[out] = poly.contains_points(pts[out])
    return bool(res[0]) if single else res


def cusp_cap_measure(level, geo: CuspGeometry) -> float:
    """Area of Omega \\ Omega_eps, ``2 alpha eps**(1 + 1/alpha) / (alpha + 1)`` for N = 2."""
    if geo.dim != 2:
        raise UnsupportedDimensionError("cap measure is implemented for N = 2 only")
    eps = _eps_of(level, geo)
    a = geo.alpha
    return 2.0 * a * eps ** (1.0 + 1.0 / a) / (a + 1.0)


def omega_area(geo: CuspGeometry, eps: float = 0.0) -> float:
    """Area of Omega_eps for N = 2 (cusp part plus closure polygon)."""
    if geo.dim != 2:
        raise UnsupportedDimensionError("area is implemented for N = 2 only")
    a = geo.alpha
    # part of Omega above the chord x_2 = 0 inside the box
    upper = 2.0 - 2.0 / (a + 1.0)
    poly = geo.closure_polygon()
    x, y = poly[:, 0], poly[:, 1]
    # closure polygon is oriented (1,0) -> ... -> (-1,0) -> back along the chord
    lower = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    return upper + lower - cusp_cap_measure(eps, geo)


@dataclass(frozen=True)
class GraphDomain:
    """Subgraph ``{(xbar, x_N): xbar in W, floor < x_N < profile(xbar)}``.

    ``profile`` and ``slope`` act on arrays of xbar values (N = 2, so xbar is
    a scalar coordinate).  ``slope`` is the analytic derivative of the
    profile; the morph Jacobians depend on it.
    """

    profile: Callable[[np.ndarray], np.ndarray]
    slope: Callable[[np.ndarray], np.ndarray]
    floor: float
    lipschitz_bound: float
    rho: float
    window: tuple[float, float] = (0.0, 1.0)
    ceiling: float = np.inf
    samples: int = field(default=2001, compare=False)

    def sample(self):
        x = np.linspace(self.window[0], self.window[1], self.samples)
        return x, np.asarray(self.profile(x), dtype=float)

    def check(self):
        """Validate ``floor + rho <= profile <= ceiling`` and the Lipschitz bound on samples."""
        if self.rho <= 0:
            raise InvalidDomainError("rho must be positive")
        x, g = self.sample()
        if np.any(g < self.floor + self.rho - 1e-14) or np.any(g > self.ceiling):
            raise InvalidDomainError(
                f"profile leaves [floor + rho, ceiling] = [{self.floor + self.rho}, {self.ceiling}]")
        lip = np.max(np.abs(np.diff(g)) / np.diff(x))
        if lip > self.lipschitz_bound * (1 + 1e-9):
            raise InvalidDomainError(
                f"sampled Lipschitz constant {lip:.6g} exceeds bound {self.lipschitz_bound}")
        return self

    def area(self) -> float:
        from scipy.integrate import quad
        val, _ = quad(lambda t: float(self.profile(np.array([t]))[0]) - self.floor,
                      *self.window, limit=200)
        return val


def flat_graph(height: float = 1.0, floor: float = 0.0, rho: float = 0.5,
               window=(0.0, 1.0), lipschitz_bound: float = 1.0) -> GraphDomain:
    return GraphDomain(
        profile=lambda x: np.full(np.shape(x), height, dtype=float),
        slope=lambda x: np.zeros(np.shape(x)),
        floor=floor, lipschitz_bound=lipschitz_bound, rho=rho, window=window)


def bump_graph(base: float, amplitude: float, center: float, radius: float,
               floor: float = 0.0, rho: float = 0.5, window=(0.0, 1.0),
               lipschitz_bound: float = 1.0) -> GraphDomain:
    """Flat top raised by ``amplitude (1 - ((x - center)/radius)**2)**2`` on the patch.

    The bump is C^{1,1}; with ``amplitude = kappa radius**2`` its second
    derivative stays bounded by ``4 kappa`` uniformly in the radius.
    """
    if radius <= 0:
        raise InvalidDomainError("bump radius must be positive")

    def profile(x):
        t = (np.asarray(x, dtype=float) - center) / radius
        bump = np.where(np.abs(t) < 1.0, (1.0 - t * t) ** 2, 0.0)
        return base + amplitude * bump

    def slope(x):
        t = (np.asarray(x, dtype=float) - center) / radius
        d = np.where(np.abs(t) < 1.0, -4.0 * t * (1.0 - t * t), 0.0)
        return amplitude * d / radius

    return GraphDomain(profile=profile, slope=slope, floor=floor,
                       lipschitz_bound=lipschitz_bound, rho=rho, window=window)


def bump_area(amplitude: float, radius: float) -> float:
    """Integral of the bump, ``16/15 amplitude radius``."""
    return 16.0 / 15.0 * amplitude * radius


def graph_morph(source: GraphDomain, target: GraphDomain):
    """Vertical stretch carrying the subgraph of ``source`` onto that of ``target``.

    Identity below ``floor + rho/2``; above it ``x_N`` is stretched affinely so
    the graph of the source profile lands on the graph of the target profile.
    """
    from .transform import Transformation

    if source.floor != target.floor or tuple(source.window) != tuple(target.window):
        raise InvalidDomainError("source and target must share window and floor")
    source.check()
    target.check()
    c = source.floor + 0.5 * source.rho

    def _parts(pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        x, y = pts[:, 0], pts[:, 1]
        s, t = source.profile(x), target.profile(x)
        return pts, x, y, s, t

    def fmap(pts):
        pts, x, y, s, t = _parts(pts)
        out = pts.copy()
        up = y > c
        out[up, 1] = c + (y[up] - c) * (t[up] - c) / (s[up] - c)
        return out

    def jac(pts):
        pts, x, y, s, t = _parts(pts)
        n = len(pts)
        J = np.zeros((n, 2, 2))
        J[:, 0, 0] = 1.0
        J[:, 1, 1] = 1.0
        up = y > c
        if np.any(up):
            su, tu = s[up] - c, t[up] - c
            ds, dt = source.slope(x[up]), target.slope(x[up])
            J[up, 1, 1] = tu / su
            J[up, 1, 0] = (y[up] - c) * (dt * su - tu * ds) / su ** 2
        return J

    def inverse(pts):
        pts, x, y, s, t = _parts(pts)
        out = pts.copy()
        up = y > c
        out[up, 1] = c + (y[up] - c) * (s[up] - c) / (t[up] - c)
        outside = (y >= t) | (y <= source.floor) | (x <= source.window[0]) | (x >= source.window[1])
        out[outside] = np.nan
        return out

    return Transformation(fmap, jac, inverse=inverse, dim=2, name="graph_morph",
                          domain_hint="graph subdomain")
