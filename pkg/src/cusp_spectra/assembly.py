"""P1 assembly of the weighted anisotropic form ``int a grad u . grad v g dx``.

Element matrices are computed for all triangles at once; the global matrices
are built from coordinate triplets laid out in element order, so duplicate
entries are summed in the same order on every run.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import InterfaceError, QuadratureError, SingularityError
from .mesh import TriangleMesh
from .quadrature import physical_points, triangle_areas, triangle_rule

DIRICHLET = "dirichlet"
NEUMANN = "neumann"

# P1 basis gradients on the reference triangle
_REF_GRAD = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


@dataclass(frozen=True)
class AssembledSystem:
    K: sp.csr_matrix
    M: sp.csr_matrix
    dof_map: np.ndarray  # global node index of each free dof
    bc: str
    n_nodes: int

    @property
    def ndof(self) -> int:
        return len(self.dof_map)

    def expand(self, vec) -> np.ndarray:
        """Scatter free-dof vectors (last axis) back to all mesh nodes (zeros on the boundary)."""
        vec = np.asarray(vec)
        out = np.zeros(vec.shape[:-1] + (self.n_nodes,), dtype=vec.dtype)
        out[..., self.dof_map] = vec
        return out


def basis_gradients(nodes, triangles):
    """Constant P1 gradients per element, shape ``(ne, 3, 2)``, and signed areas."""
    p = nodes[triangles]
    jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns are edge vectors
    inv = np.linalg.inv(jac)
    return _REF_GRAD @ inv, triangle_areas(nodes, triangles)


def _evaluate_with_nudge(fields, pts, centroids):
    """Evaluate ``(g, a)`` at flat quadrature points, nudging interface hits toward the centroid."""
    flat = pts.reshape(-1, 2).copy()
    cen = np.repeat(centroids, pts.shape[1], axis=0)
    for attempt in range(8):
        try:
            return fields.evaluate(flat)
        except InterfaceError as exc:
            hit = fields.transformation.on_interface(flat)
            if not np.any(hit):
                raise
            step = 1e-13 * 10.0 ** attempt
            d = cen[hit] - flat[hit]
            flat[hit] += step * d / np.linalg.norm(d, axis=1)[:, None]
    raise QuadratureError("could not move quadrature points off the branch interface")


def element_fields(m: TriangleMesh, fields, quad_order: int):
    """Quadrature points, weights and ``(g, a)`` at every element quadrature point."""
    rule = triangle_rule(quad_order)
    pts = physical_points(m.nodes, m.triangles, rule)
    ne, nq = pts.shape[:2]
    try:
        g, a = _evaluate_with_nudge(fields, pts, m.centroids())
    except SingularityError as exc:
        elem = None
        if exc.point is not None:
            hit = np.flatnonzero(np.all(pts.reshape(-1, 2) == exc.point, axis=1))
            elem = int(hit[0] // nq) if len(hit) else None
        raise SingularityError(f"{exc} (element {elem})", point=exc.point, element=elem) from exc
    g = g.reshape(ne, nq)
    a = a.reshape(ne, nq, 2, 2)
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(a))):
        bad = int(np.flatnonzero(~np.isfinite(g).all(axis=1) | ~np.isfinite(a).all(axis=(1, 2, 3)))[0])
        raise QuadratureError(f"non-finite coefficient in element {bad}", element=bad)
    return pts, rule.weights, g, a


def element_matrices(m: TriangleMesh, fields, quad_order: int = 7):
    """Element stiffness and mass matrices, each of shape ``(ne, 3, 3)``."""
    rule = triangle_rule(quad_order)
    grads, area = basis_gradients(m.nodes, m.triangles)
    _, w, g, a = element_fields(m, fields, quad_order)
    # a and g vary inside the element; P1 gradients do not
    a_eff = np.einsum("q,eq,eqij->eij", w, g, a)
    Ke = area[:, None, None] * np.einsum("eki,eij,elj->ekl", grads, a_eff, grads)
    phi = rule.bary  # P1 basis values at quadrature points
    Me = area[:, None, None] * np.einsum("q,eq,qk,ql->ekl", w, g, phi, phi)
    Ke = 0.5 * (Ke + np.swapaxes(Ke, 1, 2))
    Me = 0.5 * (Me + np.swapaxes(Me, 1, 2))
    return Ke, Me


def _global(m: TriangleMesh, Ee):
    n = m.n_nodes
    rows = np.repeat(m.triangles, 3, axis=1).ravel()
    cols = np.tile(m.triangles, (1, 3)).ravel()
    mat = sp.coo_matrix((Ee.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    # the triplet layout is symmetric, but float summation order of (i, j) and
    # (j, i) may differ; take the lower triangle as the source of truth
    low = sp.tril(mat, k=-1)
    return (low + low.T + sp.diags(mat.diagonal())).tocsr()


def assemble(m: TriangleMesh, fields, bc: str = DIRICHLET, quad_order: int = 7) -> AssembledSystem:
    """Stiffness ``K`` and mass ``M`` of the pulled-back form on a P1 mesh."""
    bc = bc.lower()
    if bc not in (DIRICHLET, NEUMANN):
        raise ValueError(f"bc must be 'dirichlet' or 'neumann', got {bc!r}")
    Ke, Me = element_matrices(m, fields, quad_order)
    K = _global(m, Ke)
    M = _global(m, Me)
    if bc == DIRICHLET:
        free = np.flatnonzero(~m.boundary_mask())
        K = K[free][:, free].tocsr()
        M = M[free][:, free].tocsr()
    else:
        free = np.arange(m.n_nodes)
    K.sort_indices()
    M.sort_indices()
    return AssembledSystem(K, M, free, bc, m.n_nodes)


def dump_matrix(mat, path) -> None:
    """Write the lower triangle as ``<row> <col> <value>`` lines (0-based)."""
    low = sp.tril(mat).tocoo()
    order = np.lexsort((low.col, low.row))
    with Path(path).open("w") as fh:
        for i in order:
            fh.write(f"{int(low.row[i])} {int(low.col[i])} {float(low.data[i])!r}\n")


def load_matrix(path, n: int) -> sp.csr_matrix:
    data = np.loadtxt(path, ndmin=2)
    r, c, v = data[:, 0].astype(int), data[:, 1].astype(int), data[:, 2]
    low = sp.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()
    return (low + sp.tril(low, k=-1).T).tocsr()
