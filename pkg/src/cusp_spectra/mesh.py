"""Conforming P1 triangle meshes of the reference domain and of rectangles.

The cusp reference domain Omega_eps0 is described as a planar straight line
graph: the boundary polyline (profile sampled to a chord tolerance, cap
segment, closure polyline) plus interior constraints along the kink set of
every declared perturbation level.  The constrained Delaunay triangulation
and the quality/size refinement are delegated to Shewchuk's Triangle.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import triangle as _triangle

from .errors import MeshError, UnsupportedDimensionError
from .geometry import CuspGeometry, h_eps
from .quadrature import triangle_areas


@dataclass(frozen=True)
class TriangleMesh:
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_nodes: frozenset
    h_max: float
    region_tag: np.ndarray
    description: str = field(default="", compare=False)

    @classmethod
    def build(cls, nodes, triangles, region_tag=None, description=""):
        nodes = np.ascontiguousarray(nodes, dtype=float)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        areas = triangle_areas(nodes, triangles)
        flip = areas < 0
        if np.any(flip):
            triangles = triangles.copy()
            triangles[flip] = triangles[flip][:, [0, 2, 1]]
        if region_tag is None:
            region_tag = np.zeros(len(triangles), dtype=np.int64)
        nodes.setflags(write=False)
        triangles.setflags(write=False)
        tag = np.asarray(region_tag, dtype=np.int64)
        tag.setflags(write=False)
        return cls(nodes, triangles, frozenset(_boundary_nodes(triangles).tolist()),
                   float(element_diameters(nodes, triangles).max()), tag, description)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def areas(self) -> np.ndarray:
        return triangle_areas(self.nodes, self.triangles)

    def total_area(self) -> float:
        return float(np.sum(self.areas()))

    def diameters(self) -> np.ndarray:
        return element_diameters(self.nodes, self.triangles)

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[sorted(self.boundary_nodes)] = True
        return mask

    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)


def element_diameters(nodes, triangles) -> np.ndarray:
    p = nodes[triangles]
    e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
    return np.linalg.norm(e, axis=2).max(axis=1)


def _edges(triangles):
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    return np.sort(e, axis=1)


def _boundary_nodes(triangles) -> np.ndarray:
    # boundary edges belong to exactly one triangle
    uniq, counts = np.unique(_edges(triangles), axis=0, return_counts=True)
    return np.unique(uniq[counts == 1])


def check_conforming(m: TriangleMesh) -> bool:
    """Every edge is shared by at most two triangles and no hanging nodes occur."""
    _, counts = np.unique(_edges(m.triangles), axis=0, return_counts=True)
    if np.any(counts > 2):
        return False
    # Euler characteristic of a disc: V - E + F = 1
    n_edges = len(counts)
    used = np.unique(m.triangles).size
    return used - n_edges + m.n_triangles == 1


# --- structured meshes --------------------------------------------------------

def mesh_rectangle(x0: float = 0.0, x1: float = 1.0, y0: float = 0.0, y1: float = 1.0,
                   nx: int = 8, ny: int | None = None) -> TriangleMesh:
    """Structured mesh with each cell split along its ascending diagonal."""
    ny = nx if ny is None else ny
    if nx < 1 or ny < 1:
        raise MeshError("need at least one cell per direction")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    j, i = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    a = (j * (nx + 1) + i).ravel()
    b, c, d = a + 1, a + nx + 2, a + nx + 1
    tris = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return TriangleMesh.build(nodes, tris, description=f"rectangle {nx}x{ny}")


def cells_for_diameter(length: float, h: float) -> int:
    """Cells per side so the diagonal of a square cell is at most ``h``."""
    return int(np.ceil(np.sqrt(2.0) * length / h - 1e-12))


# --- Triangle-based meshing ---------------------------------------------------

class _PSLG:
    """Vertex/segment accumulator that merges coincident vertices."""

    def __init__(self):
        self.vertices: list[tuple[float, float]] = []
        self.index: dict[tuple[float, float], int] = {}
        self.segments: list[tuple[int, int]] = []
        self.markers: list[int] = []

    def vertex(self, p) -> int:
        key = (round(float(p[0]), 14) + 0.0, round(float(p[1]), 14) + 0.0)
        if key not in self.index:
            self.index[key] = len(self.vertices)
            self.vertices.append((float(p[0]), float(p[1])))
        return self.index[key]

    def polyline(self, pts, marker: int):
        ids = [self.vertex(p) for p in pts]
        for u, v in zip(ids[:-1], ids[1:]):
            if u != v:
                self.segments.append((u, v))
                self.markers.append(marker)

    def as_dict(self):
        return dict(vertices=np.array(self.vertices), segments=np.array(self.segments),
                    segment_markers=np.array(self.markers, dtype=np.int32)[:, None])


def sample_curve(f, a: float, b: float, tol: float, max_len: float, breaks=()) -> np.ndarray:
    """Abscissae on ``[a, b]`` such that the chord deviation of ``f`` stays below ``tol``.

    Each chord is also at most ``max_len`` long (measured along the chord) and
    every value in ``breaks`` becomes a sample.
    """
    knots = sorted({a, b, *[t for t in breaks if a < t < b]})
    out = [knots[0]]
    for lo, hi in zip(knots[:-1], knots[1:]):
        stack = [(lo, hi, float(f(lo)), float(f(hi)))]
        pieces = []
        while stack:
            x0, x1, f0, f1 = stack.pop()
            xm = 0.5 * (x0 + x1)
            fm = float(f(xm))
            quarter = (0.25 * (3 * x0 + x1), 0.25 * (x0 + 3 * x1))
            dev = max(abs(fm - 0.5 * (f0 + f1)),
                      abs(float(f(quarter[0])) - 0.25 * (3 * f0 + f1)),
                      abs(float(f(quarter[1])) - 0.25 * (f0 + 3 * f1)))
            length = np.hypot(x1 - x0, f1 - f0)
            if (dev > tol or length > max_len) and x1 - x0 > 1e-12:
                stack.append((xm, x1, fm, f1))
                stack.append((x0, xm, f0, fm))
            else:
                pieces.append(x1)
        out.extend(sorted(pieces))
    return np.array(out)


def _size_limits(tri: dict, size_fn):
    nodes = tri["vertices"]
    t = tri["triangles"]
    diam = element_diameters(nodes, t)
    target = size_fn(nodes[t], diam)
    return diam, target


def _refine_to_size(tri: dict, size_fn, opts: str, max_rounds: int = 40) -> dict:
    for _ in range(max_rounds):
        diam, target = _size_limits(tri, size_fn)
        over = diam > target
        if not np.any(over):
            return tri
        areas = np.abs(triangle_areas(tri["vertices"], tri["triangles"]))
        limit = np.where(over, 0.7 * areas * (target / diam) ** 2, -1.0)
        tri = dict(tri)
        tri["triangle_max_area"] = limit
        tri = _triangle.triangulate(tri, "r" + opts + "a")
    raise MeshError("size refinement did not converge")


def _triangulate(pslg: dict, size_fn, h_min: float, min_angle: float = 30.0) -> dict:
    opts = f"pq{min_angle:g}Q"
    try:
        tri = _triangle.triangulate(pslg, opts + f"a{0.3 * h_min ** 2:.17g}"
                                    if h_min is not None else opts)
    except Exception as exc:  # Triangle raises bare RuntimeError on bad input
        raise MeshError(f"constrained triangulation failed: {exc}") from exc
    if "triangles" not in tri or len(tri["triangles"]) == 0:
        raise MeshError("triangulation produced no elements (self-intersecting input?)")
    return _refine_to_size(tri, size_fn, opts)


def mesh_polygon(vertices, h: float, min_angle: float = 30.0) -> TriangleMesh:
    """Quality mesh of a simple polygon with element diameter at most ``h``."""
    if h <= 0:
        raise MeshError("h must be positive")
    v = np.asarray(vertices, dtype=float)
    pslg = _PSLG()
    pslg.polyline(np.vstack([v, v[:1]]), 1)
    tri = _triangulate(pslg.as_dict(), lambda p, d: np.full(len(d), h), h, min_angle)
    return TriangleMesh.build(tri["vertices"], tri["triangles"], description=f"polygon h={h:g}")


def kink_levels(geo: CuspGeometry, eps_levels: Iterable[float]) -> list[float]:
    """Levels whose kink set lies strictly inside the cap region, sorted ascending."""
    return sorted({float(e) for e in eps_levels if 0.0 < e < geo.eps0})


def mesh_reference(geo: CuspGeometry, h: float, grading: float = 1.0,
                   eps_levels: Sequence[float] = (), min_angle: float = 30.0,
                   interface_segment: float | None = None,
                   axis_grading: float | None = None) -> TriangleMesh:
    """Graded conforming mesh of the polygonal approximation of Omega_eps0.

    Element diameters are at most ``h`` and at most ``h / grading`` within
    distance ``2 eps0**(1/alpha)`` of the cap.  For each level ``eps`` in
    ``eps_levels`` the kink set of ``phi_eps`` (the flat part of ``h_eps``,
    the vertical lines ``|x| = eps**(1/alpha)`` above it, and the common
    interface curve ``h_0``) is embedded as interior edges.

    The Jacobian of ``phi_eps`` jumps across the curved interface, so the
    chords approximating it are kept at most ``interface_segment`` long
    (default ``h / (4 grading)``); the misassigned sliver area shrinks like
    the square of that length.

    With ``axis_grading = kappa`` the moving band above ``h_0`` is further
    refined toward the axis ``xbar = 0``: element diameters there are at
    most ``kappa * max(|xbar|, x_min / 2)`` with ``x_min`` the narrowest
    kink abscissa.  The maps of different levels differ only in the columns
    ``|xbar| < eps**(1/alpha)``, so this keeps their discretisation errors
    from swamping the small spectral differences of fine levels.
    """
    if geo.dim != 2:
        raise UnsupportedDimensionError("meshing is implemented for N = 2 only")
    if h <= 0 or grading < 1:
        raise MeshError("need h > 0 and grading >= 1")
    a, e0 = geo.alpha, geo.eps0
    xc = geo.cap_radius
    top_y = 1.0 - e0
    fine = h / grading
    tol_fine, tol = fine ** 2 / 8.0, h ** 2 / 8.0
    levels = kink_levels(geo, eps_levels)
    xs = [e ** (1.0 / a) for e in levels]
    H = [float(h_eps(x, 0.0, geo)) for x in xs]

    def prof(x):
        return 1.0 - abs(x) ** a

    pslg = _PSLG()
    # closure, from (1, 0) around the bottom to (-1, 0)
    closure = geo.closure_polygon()
    pslg.polyline(closure, 1)
    # profile from (-1, 0) up to the cap corner, sampled on both sides of distance 2 xc
    for sign in (-1.0, 1.0):
        bp = min(1.0, 3.0 * xc)
        near = sample_curve(prof, xc, bp, tol_fine, fine)
        far = sample_curve(prof, bp, 1.0, tol, h) if bp < 1.0 else np.array([bp])
        xs_side = np.concatenate([near, far[1:]])
        pts = np.column_stack([sign * xs_side, 1.0 - xs_side ** a])
        pts[-1] = (sign * 1.0, 0.0)
        pslg.polyline(pts if sign > 0 else pts[::-1], 1)
    # flat cap with the kink abscissae as vertices
    cap_x = sample_curve(lambda x: top_y, -xc, xc, tol_fine, fine,
                         breaks=[s * x for x in xs for s in (-1, 1)])
    pslg.polyline(np.column_stack([cap_x[::-1], np.full(len(cap_x), top_y)]), 1)

    # interface curve h_0 between the cap corners
    def h0(x):
        return float(h_eps(abs(x), 0.0, geo))

    seg = fine / 4.0 if interface_segment is None else interface_segment
    ix = sample_curve(h0, -xc, xc, seg ** 2 / 8.0, seg, breaks=[s * x for x in xs for s in (-1, 1)])
    pslg.polyline(np.column_stack([ix, [h0(x) for x in ix]]), 2)
    for i, (x, Hi) in enumerate(zip(xs, H)):
        # flat part of h_eps for this level, split at narrower levels' kink lines
        cuts = sorted({-x, x, *[s * xx for xx in xs[:i] for s in (-1, 1)]})
        flat = sample_curve(lambda t: Hi, cuts[0], cuts[-1], tol_fine, fine, breaks=cuts)
        pslg.polyline(np.column_stack([flat, np.full(len(flat), Hi)]), 3)
        # vertical kink lines from the flat part up to the cap
        heights = sorted({Hi, top_y, *H[i + 1:]})
        col = sample_curve(lambda t: 0.0, heights[0], heights[-1], tol_fine, fine, breaks=heights)
        for s in (-1.0, 1.0):
            pslg.polyline(np.column_stack([np.full(len(col), s * x), col]), 4)

    band = 2.0 * xc
    x_floor = 0.5 * min(xs) if xs else fine / 8.0
    h_floor = h0(0.0) - fine

    def size_fn(tri_pts, diam):
        # conservative distance from a triangle to the cap segment
        px = np.clip(tri_pts[..., 0], -xc, xc)
        dist = np.hypot(tri_pts[..., 0] - px, tri_pts[..., 1] - top_y).min(axis=1) - diam
        size = np.where(dist <= band, fine, h)
        if axis_grading is not None:
            ax = np.abs(tri_pts[..., 0]).min(axis=1)
            in_band = (ax < xc) & (tri_pts[..., 1].max(axis=1) > h_floor)
            local = axis_grading * np.maximum(ax, x_floor)
            size = np.where(in_band, np.minimum(size, local), size)
        return size

    tri = _triangulate(pslg.as_dict(), size_fn, fine, min_angle)
    nodes, tris = tri["vertices"], tri["triangles"]
    cent = nodes[tris].mean(axis=1)
    s = np.abs(cent[:, 0])
    tag = np.zeros(len(tris), dtype=np.int64)
    inside = s < xc
    if np.any(inside):
        tag[inside] = (cent[inside, 1] > h_eps(s[inside], 0.0, geo)).astype(np.int64)
    return TriangleMesh.build(nodes, tris, tag,
                              description=f"cusp alpha={a:g} eps0={e0:g} h={h:g} grading={grading:g}")


def polygonal_area_bound(geo: CuspGeometry, h: float, grading: float = 1.0) -> float:
    """Upper bound on the area lost to chords of the sampled profile."""
    fine = h / grading
    # chord deviation below tol over a span of length at most 2 (both sides)
    return 2.0 * (fine ** 2 / 8.0 * 3.0 * geo.cap_radius + h ** 2 / 8.0 * 1.0) + 1e-12


# --- quality -----------------------------------------------------------------

@dataclass(frozen=True)
class MeshQuality:
    min_angle: float
    max_aspect: float
    n_triangles: int
    ok: bool


def mesh_quality(m: TriangleMesh, min_angle: float = 15.0) -> MeshQuality:
    """Smallest interior angle (degrees), worst aspect ratio, element count."""
    p = m.nodes[m.triangles]
    angles = []
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        v = p[:, (k + 2) % 3] - p[:, k]
        cosang = np.einsum("ij,ij->i", u, v) / np.maximum(
            np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1), 1e-300)
        angles.append(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))
    amin = float(np.min(angles)) if m.n_triangles else 0.0
    area = np.abs(m.areas())
    e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
    lengths = np.linalg.norm(e, axis=2)
    # equals 1 for an equilateral triangle
    with np.errstate(divide="ignore"):
        aspect = lengths.max(axis=1) * lengths.sum(axis=1) / (4.0 * np.sqrt(3.0) * area)
    return MeshQuality(amin, float(aspect.max()), m.n_triangles, bool(amin >= min_angle))


# --- text format ---------------------------------------------------------------

def write_mesh(m: TriangleMesh, path) -> None:
    bmask = m.boundary_mask()
    lines = [f"nodes {m.n_nodes}"]
    lines += [f"{i} {x:.17g} {y:.17g} {int(b)}" for i, ((x, y), b) in enumerate(zip(m.nodes, bmask))]
    lines.append(f"triangles {m.n_triangles}")
    lines += [f"{i} {a} {b} {c} {t}" for i, ((a, b, c), t) in enumerate(zip(m.triangles, m.region_tag))]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> TriangleMesh:
    rows = Path(path).read_text().split("\n")
    try:
        head, n = rows[0].split()
        if head != "nodes":
            raise ValueError("missing nodes header")
        n = int(n)
        node_rows = [r.split() for r in rows[1:1 + n]]
        nodes = np.array([[float(r[1]), float(r[2])] for r in node_rows])
        head, nt = rows[1 + n].split()
        if head != "triangles":
            raise ValueError("missing triangles header")
        tri_rows = [r.split() for r in rows[2 + n:2 + n + int(nt)]]
        tris = np.array([[int(r[1]), int(r[2]), int(r[3])] for r in tri_rows], dtype=np.int64)
        tags = np.array([int(r[4]) for r in tri_rows], dtype=np.int64)
    except (ValueError, IndexError) as exc:
        raise MeshError(f"malformed mesh file {path}: {exc}") from exc
    return TriangleMesh.build(nodes, tris.reshape(-1, 3), tags)
