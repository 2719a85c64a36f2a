"""Symmetric quadrature rules on triangles.

Rules are stored in barycentric coordinates with weights normalised to sum
to one, so the integral over a triangle is ``area * sum(w_q f(x_q))``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class TriangleRule:
    bary: np.ndarray  # (nq, 3)
    weights: np.ndarray  # (nq,), sums to 1
    degree: int

    @property
    def npoints(self) -> int:
        return len(self.weights)


@lru_cache(maxsize=None)
def triangle_rule(order: int) -> TriangleRule:
    """Return the 3-point (degree 2) or 7-point (degree 5) rule."""
    if order == 3:
        a, b = 2.0 / 3.0, 1.0 / 6.0
        bary = np.array([[a, b, b], [b, a, b], [b, b, a]])
        return TriangleRule(bary, np.full(3, 1.0 / 3.0), 2)
    if order == 7:
        r = np.sqrt(15.0)
        a1 = (6.0 - r) / 21.0
        a2 = (6.0 + r) / 21.0
        w1 = (155.0 - r) / 1200.0
        w2 = (155.0 + r) / 1200.0
        pts = [[1 / 3, 1 / 3, 1 / 3]]
        wts = [9.0 / 40.0]
        for a, w in ((a1, w1), (a2, w2)):
            c = 1.0 - 2.0 * a
            pts += [[c, a, a], [a, c, a], [a, a, c]]
            wts += [w, w, w]
        return TriangleRule(np.array(pts), np.array(wts), 5)
    raise ValueError(f"quadrature order must be 3 or 7, got {order}")


def physical_points(nodes, triangles, rule: TriangleRule) -> np.ndarray:
    """Quadrature points of every element, shape ``(n_elem, nq, 2)``."""
    verts = nodes[triangles]  # (ne, 3, 2)
    return np.einsum("qk,ekd->eqd", rule.bary, verts)


def triangle_areas(nodes, triangles) -> np.ndarray:
    p = nodes[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
