"""The vicinity measure ``delta_q`` between two transformations.

With ``w = (g / g~)^(1/2)`` and ``S = w^-2 a^-1/2 a~ a^-1/2``::

    delta1 = |w - 1|_q + |1/w - 1|_q
    delta2 = |(S^1/2 - S^-1/2) a^1/2|_q + |(S - I) a^1/2|_q

where ``|.|_q`` is the ``L^q(Omega, g dx)`` norm and the pointwise matrix
norm is Frobenius.  For ``q = inf`` the maximum over quadrature points is
used, which bounds the essential supremum from below.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InputError, QuadratureError
from .mesh import TriangleMesh
from .quadrature import physical_points, triangle_areas, triangle_rule
from .transform import PairFields, PullbackFields, Transformation, spd_sqrt


@dataclass(frozen=True)
class VicinityReport:
    q: float
    delta1: float
    delta2: float
    delta: float
    sobolev_comparison: Optional[float] = None
    unweighted: Optional[float] = None
    parts: tuple = ()


def _check_q(q: float) -> float:
    q = float(q)
    if not (q > 1.0):
        raise InputError(f"q must exceed 1 (or be inf), got {q}")
    return q


def lq_norm(values, weights, q: float) -> float:
    """``(sum weights * |values|**q)**(1/q)``; the max of ``|values|`` for ``q = inf``."""
    v = np.abs(np.asarray(values, dtype=float)).ravel()
    if np.isinf(q):
        return float(v.max()) if v.size else 0.0
    return float(np.sum(np.asarray(weights).ravel() * v ** q) ** (1.0 / q))


def _quad_setup(m: TriangleMesh, quad_order: int):
    rule = triangle_rule(quad_order)
    pts = physical_points(m.nodes, m.triangles, rule)
    dx = np.abs(triangle_areas(m.nodes, m.triangles))[:, None] * rule.weights[None, :]
    return pts, dx


def _pair_values(pf: PairFields, pts, centroids):
    flat = pts.reshape(-1, pts.shape[-1]).copy()
    hit = np.zeros(len(flat), dtype=bool)
    for t in (pf.f.transformation, pf.f_tilde.transformation):
        hit |= t.on_interface(flat)
    if np.any(hit):
        cen = np.repeat(centroids, pts.shape[1], axis=0)
        d = cen[hit] - flat[hit]
        flat[hit] += 1e-13 * d / np.linalg.norm(d, axis=1)[:, None]
    return pf.evaluate(flat), flat


def delta_q(pf: PairFields, f: PullbackFields | None, m: TriangleMesh, q: float,
            quad_order: int = 7, with_sobolev: bool = False) -> VicinityReport:
    """Compute ``delta_q`` and its two parts by quadrature on ``m``."""
    q = _check_q(q)
    pts, dx = _quad_setup(m, quad_order)
    (w, S, g, a, same), flat = _pair_values(pf, pts, m.centroids())
    if f is not None and f is not pf.f:
        g = f.evaluate(flat)[0]
    finite = np.isfinite(w) & np.isfinite(g) & np.all(np.isfinite(S), axis=(1, 2))
    if not np.all(finite):
        i = int(np.flatnonzero(~finite)[0])
        raise QuadratureError(f"non-finite integrand at {flat[i]}", element=i // pts.shape[1])
    n, N = len(w), S.shape[-1]
    I = np.eye(N)
    r1 = np.abs(w - 1.0)
    r2 = np.abs(1.0 / w - 1.0)
    r3 = np.zeros(n)
    r4 = np.zeros(n)
    diff = ~same
    if np.any(diff):
        Sd, ad = S[diff], a[diff]
        a_half = spd_sqrt(ad)
        S_half = spd_sqrt(Sd)
        S_mhalf = spd_sqrt(Sd, inverse=True)
        r3[diff] = np.linalg.norm((S_half - S_mhalf) @ a_half, axis=(1, 2))
        r4[diff] = np.linalg.norm((Sd - I) @ a_half, axis=(1, 2))
    r1[same] = 0.0
    r2[same] = 0.0
    weight = (dx.ravel() * g)
    parts = tuple(lq_norm(r, weight, q) for r in (r1, r2, r3, r4))
    d1, d2 = parts[0] + parts[1], parts[2] + parts[3]
    plain = dx.ravel()
    unweighted = sum(lq_norm(r, plain, q) for r in (r1, r2, r3, r4))
    sob = None
    if with_sobolev:
        sob = sobolev_distance(pf.f.transformation, pf.f_tilde.transformation, m, q, quad_order)
    return VicinityReport(q, d1, d2, d1 + d2, sob, unweighted, parts)


def sobolev_distance(t: Transformation, tt: Transformation, m: TriangleMesh, q: float,
                     quad_order: int = 7) -> float:
    """``|phi - phi~|_{L^q} + |grad phi - grad phi~|_{L^q}`` with Lebesgue measure."""
    q = _check_q(q)
    pts, dx = _quad_setup(m, quad_order)
    flat = pts.reshape(-1, pts.shape[-1]).copy()
    hit = t.on_interface(flat) | tt.on_interface(flat)
    if np.any(hit):
        cen = np.repeat(m.centroids(), pts.shape[1], axis=0)
        d = cen[hit] - flat[hit]
        flat[hit] += 1e-13 * d / np.linalg.norm(d, axis=1)[:, None]
    dv = np.linalg.norm(t.map(flat) - tt.map(flat), axis=1)
    dj = np.linalg.norm(t.jacobian(flat) - tt.jacobian(flat), axis=(1, 2))
    if not (np.all(np.isfinite(dv)) and np.all(np.isfinite(dj))):
        raise QuadratureError("non-finite map difference")
    w = dx.ravel()
    return lq_norm(dv, w, q) + lq_norm(dj, w, q)


def conjugate_exponent(q0: float) -> float:
    """``2 q0 / (q0 - 2)``, the exponent paired with eigenfunction integrability ``q0``."""
    if np.isinf(q0):
        return 2.0
    if q0 <= 2:
        raise InputError("q0 must exceed 2")
    return 2.0 * q0 / (q0 - 2.0)
