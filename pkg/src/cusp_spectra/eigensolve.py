"""Lowest eigenpairs of ``K psi = lambda M psi``.

The sparse path is ARPACK in shift-invert mode around a fixed shift below the
spectrum, with one sparse LU factorisation of ``K - sigma M``.  A dense
generalized symmetric solver serves as a cross-check for small systems.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import AssembledSystem
from .errors import InputError, PartialConvergenceError, SolverError

#: relative gap below which neighbouring eigenvalues form one cluster
CLUSTER_RTOL = 1e-6


@dataclass(frozen=True)
class EigenDecomposition:
    lambdas: np.ndarray  # ascending
    vectors: np.ndarray  # (count, ndof), M-orthonormal rows
    residuals: np.ndarray
    dof_map: np.ndarray
    n_nodes: int

    @property
    def count(self) -> int:
        return len(self.lambdas)

    def nodal(self, i=None) -> np.ndarray:
        """Eigenvector(s) on all mesh nodes, zero at eliminated boundary nodes."""
        vec = self.vectors if i is None else self.vectors[i]
        out = np.zeros(vec.shape[:-1] + (self.n_nodes,))
        out[..., self.dof_map] = vec
        return out

    def clusters(self, rtol: float = CLUSTER_RTOL) -> list[list[int]]:
        return find_clusters(self.lambdas, rtol)


def find_clusters(lambdas, rtol: float = CLUSTER_RTOL) -> list[list[int]]:
    """Group consecutive eigenvalues whose relative gap is below ``rtol``."""
    groups: list[list[int]] = []
    for i, lam in enumerate(lambdas):
        if groups:
            prev = lambdas[groups[-1][-1]]
            if abs(lam - prev) <= rtol * max(abs(lam), abs(prev), 1e-300):
                groups[-1].append(i)
                continue
        groups.append([i])
    return groups


def _finalize(sys: AssembledSystem, lam, vec) -> EigenDecomposition:
    order = np.argsort(lam, kind="stable")
    lam = np.asarray(lam)[order]
    V = np.asarray(vec)[:, order]
    G = V.T @ (sys.M @ V)
    G = 0.5 * (G + G.T)
    if np.max(np.abs(G - np.eye(len(lam)))) > 1e-13:
        L = np.linalg.cholesky(G)
        V = sla.solve_triangular(L, V.T, lower=True).T
    # sign convention: largest-magnitude coefficient positive
    idx = np.argmax(np.abs(V), axis=0)
    V = V * np.where(V[idx, np.arange(V.shape[1])] < 0, -1.0, 1.0)
    MV = sys.M @ V
    R = sys.K @ V - MV * lam
    res = np.linalg.norm(R, axis=0) / np.linalg.norm(MV, axis=0)
    return EigenDecomposition(lam, np.ascontiguousarray(V.T), res, sys.dof_map, sys.n_nodes)


def solve_lowest(sys: AssembledSystem, count: int, tol: float = 1e-8,
                 sigma: float = -1.0, maxiter: int | None = None) -> EigenDecomposition:
    """The ``count`` smallest eigenpairs by shift-invert Lanczos.

    ``tol`` bounds the residual ``|K psi - lambda M psi| / |M psi|`` relative
    to ``max(1, lambda)``; ARPACK itself runs at machine precision.
    """
    n = sys.ndof
    if count < 1 or 4 * count > n:
        raise InputError(f"count must satisfy 1 <= count <= dof/4 = {n // 4}, got {count}")
    if tol <= 0:
        raise InputError("tol must be positive")
    A = (sys.K - sigma * sys.M).tocsc()
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise SolverError(f"factorization of K - sigma M failed: {exc}") from exc
    op = spla.LinearOperator((n, n), matvec=lu.solve, dtype=float)
    v0 = np.ones(n) + 0.01 * np.cos(np.arange(n))
    try:
        lam, vec = spla.eigsh(sys.K, k=count, M=sys.M, sigma=sigma, which="LM",
                              OPinv=op, v0=v0, tol=0.0, maxiter=maxiter)
    except spla.ArpackNoConvergence as exc:
        raise PartialConvergenceError(
            f"ARPACK converged {len(exc.eigenvalues)} of {count} eigenpairs",
            converged=len(exc.eigenvalues)) from exc
    dec = _finalize(sys, lam, vec)
    bad = dec.residuals > tol * np.maximum(1.0, np.abs(dec.lambdas))
    if np.any(bad):
        raise SolverError(f"residual {dec.residuals.max():.3e} exceeds tolerance {tol:g}")
    return dec


def solve_dense(sys: AssembledSystem, count: int | None = None) -> EigenDecomposition:
    """Dense generalized symmetric eigensolve (reference path for small systems)."""
    n = sys.ndof
    count = n if count is None else count
    lam, vec = sla.eigh(sys.K.toarray(), sys.M.toarray(), subset_by_index=[0, count - 1])
    return _finalize(sys, lam, vec)


def system_hash(sys: AssembledSystem) -> str:
    h = hashlib.sha256()
    for mat in (sys.K, sys.M):
        csr = sp.csr_matrix(mat)
        for arr in (csr.indptr, csr.indices, csr.data):
            h.update(np.ascontiguousarray(arr).tobytes())
    h.update(np.ascontiguousarray(sys.dof_map, dtype=np.int64).tobytes())
    h.update(f"{sys.bc}:{sys.n_nodes}".encode())
    return h.hexdigest()


def save_eigs(path, dec: EigenDecomposition, digest: str) -> None:
    lines = [f"eigs {dec.count} {dec.vectors.shape[1]} {digest}"]
    lines += [f"{lam!r} {res!r}" for lam, res in zip(dec.lambdas.tolist(), dec.residuals.tolist())]
    lines += [" ".join(repr(x) for x in row) for row in dec.vectors.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_eigs(path, sys: AssembledSystem, count: int, digest: str | None = None):
    """Cached decomposition if the file matches the system hash and count, else ``None``."""
    path = Path(path)
    if not path.exists():
        return None
    digest = system_hash(sys) if digest is None else digest
    with path.open() as fh:
        head = fh.readline().split()
        if len(head) != 4 or head[0] != "eigs" or head[3] != digest:
            return None
        n, dof = int(head[1]), int(head[2])
        if n != count or dof != sys.ndof:
            return None
        rows = [fh.readline().split() for _ in range(n)]
        vecs = np.array([[float(x) for x in fh.readline().split()] for _ in range(n)])
    lam = np.array([float(r[0]) for r in rows])
    res = np.array([float(r[1]) for r in rows])
    return EigenDecomposition(lam, vecs, res, sys.dof_map, sys.n_nodes)


def solve_cached(sys: AssembledSystem, count: int, tol: float, cache_path=None, log=None):
    """:func:`solve_lowest` with an optional on-disk cache keyed by the system hash."""
    if cache_path is None:
        return solve_lowest(sys, count, tol), False
    digest = system_hash(sys)
    dec = load_eigs(cache_path, sys, count, digest)
    if dec is not None:
        if log is not None:
            log(f"cache hit {cache_path}")
        return dec, True
    dec = solve_lowest(sys, count, tol)
    save_eigs(cache_path, dec, digest)
    return dec, False
