"""Spectral stability measurements and the exponent calculus for cusp domains."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from matplotlib.tri import LinearTriInterpolator, Triangulation
from scipy import stats
from scipy.integrate import quad

from .eigensolve import EigenDecomposition, find_clusters
from .errors import ClusterError, FitError, HypothesisError, InputError
from .mesh import TriangleMesh
from .quadrature import physical_points, triangle_areas, triangle_rule
from .transform import Transformation

# --- Schatten distance of resolvent powers --------------------------------------


@dataclass(frozen=True)
class SchattenDistance:
    k: int
    value: float
    tail_bound: float
    n_used: int
    sufficient: bool
    weyl_constant: float = float("nan")


def weyl_constant(lambdas, dim: int = 2) -> float:
    """Conservative Weyl constant ``c`` with ``lambda_n >= c n^(2/N)`` on the upper half of the list."""
    lam = np.asarray(lambdas, dtype=float)
    n = np.arange(1, len(lam) + 1)
    upper = n > len(lam) // 2
    ratio = lam[upper] / n[upper] ** (2.0 / dim)
    return float(max(ratio.min(), 0.0))


def weyl_tail(c: float, n_used: int, k: int, dim: int = 2) -> float:
    """``2 sum_{n > n_used} (c n^(2/N) + 1)^(-2k)``, bounded above by the integral from ``n_used``."""
    if c <= 0:
        return float("inf")
    if dim == 2:
        # integral of (c x + 1)^(-2k) from n_used to infinity
        return 2.0 * (c * n_used + 1.0) ** (1.0 - 2.0 * k) / (c * (2.0 * k - 1.0))

    def f(x):
        return (c * x ** (2.0 / dim) + 1.0) ** (-2.0 * k)

    val, _ = quad(f, n_used, np.inf, limit=200)
    return 2.0 * val


def _check_spectrum(lam, name):
    lam = np.asarray(lam, dtype=float)
    if lam.ndim != 1 or lam.size == 0:
        raise InputError(f"{name} must be a non-empty 1-D list")
    if np.any(np.diff(lam) < 0):
        raise InputError(f"{name} must be ascending")
    return lam


def schatten_distance(lam, lam_t, k: int, dim: int = 2, weyl_c: float | None = None) -> SchattenDistance:
    """``(sum [(lam_t_n + 1)^-k - (lam_n + 1)^-k]^2)^(1/2)`` over the shared truncation.

    The tail bound uses a Weyl constant fitted to both spectra (or ``weyl_c``);
    the truncation counts as sufficient when the bound is at most 1% of the value.
    """
    if int(k) != k or k < 1:
        raise InputError(f"k must be a positive integer, got {k}")
    k = int(k)
    a = _check_spectrum(lam, "lam")
    b = _check_spectrum(lam_t, "lam_t")
    if a.shape != b.shape:
        raise InputError(f"spectra have different lengths {a.size} and {b.size}")
    value = float(np.sqrt(np.sum(((b + 1.0) ** -k - (a + 1.0) ** -k) ** 2)))
    c = weyl_c if weyl_c is not None else min(weyl_constant(a, dim), weyl_constant(b, dim))
    tail = weyl_tail(c, a.size, k, dim)
    return SchattenDistance(k, value, tail, a.size, bool(tail <= 0.01 * value), c)


# --- projector perturbation ------------------------------------------------------

HOLDS = "holds"
VIOLATED = "violated"
PRECONDITION_VIOLATED = "precondition_violated"


@dataclass(frozen=True)
class ProjectorPair:
    P: np.ndarray
    Q: np.ndarray
    cluster: tuple
    gap: float
    bound: float
    norm_diff: float
    distance: float
    verdict: str
    minmax_ok: bool
    max_shift: float


def projector_check(A, B, nu: float, rtol: float = 1e-9) -> ProjectorPair:
    """Compare spectral projectors of ``A`` (onto the ``nu`` eigenspace) and ``B``.

    ``Q`` projects onto the eigenvectors of ``B`` with the same indices (in
    ascending order) as the cluster of ``nu`` in ``A``.  The verdict reports
    whether ``|P - Q| < 2 (1 + |cluster|) |A - B| / d`` holds, or that the
    precondition ``|A - B| < d / 2`` fails.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    lam, V = np.linalg.eigh(A)
    mu, W = np.linalg.eigh(B)
    scale = max(1.0, float(np.max(np.abs(lam))))
    idx = np.flatnonzero(np.abs(lam - nu) <= rtol * scale)
    if idx.size == 0:
        raise InputError(f"{nu} is not an eigenvalue of A")
    others = np.setdiff1d(np.arange(len(lam)), idx)
    gap = float(np.min(np.abs(lam[others] - nu))) if others.size else float("inf")
    norm_diff = float(np.linalg.norm(A - B, 2))
    P = V[:, idx] @ V[:, idx].T
    Q = W[:, idx] @ W[:, idx].T
    dist = float(np.linalg.norm(P - Q, 2))
    bound = 2.0 * (1 + idx.size) * norm_diff / gap
    shift = float(np.max(np.abs(lam - mu)))
    # eigenvalues carry O(eps |A|) roundoff of their own
    minmax_ok = shift <= norm_diff + 1e-12 * scale
    if not norm_diff < gap / 2.0:
        verdict = PRECONDITION_VIOLATED
    elif dist < bound or (norm_diff == 0.0 and dist == 0.0):
        verdict = HOLDS
    else:
        verdict = VIOLATED
    return ProjectorPair(P, Q, tuple(int(i) for i in idx), gap, bound, norm_diff, dist,
                         verdict, bool(minmax_ok), shift)


@dataclass(frozen=True)
class EnsembleReport:
    samples: int
    admissible: int
    violations: int
    minmax_violations: int
    max_ratio: float  # largest distance / bound among admissible samples
    seed: int
    dims: np.ndarray = field(default=None, repr=False, compare=False)
    ratios: np.ndarray = field(default=None, repr=False, compare=False)  # nan if inadmissible
    verdicts: tuple = field(default=(), repr=False, compare=False)
    minmax: np.ndarray = field(default=None, repr=False, compare=False)


def random_pair(rng: np.random.Generator, max_dim: int = 12):
    """Random PSD pair ``(A, B)`` with a clustered eigenvalue ``nu`` of ``A``."""
    n = int(rng.integers(2, max_dim + 1))
    size = int(rng.integers(1, n))
    nu = float(rng.uniform(1.0, 10.0))
    rest = rng.uniform(1.0, 10.0, n - size)
    # keep the cluster separated from the rest
    rest = np.where(np.abs(rest - nu) < 0.05, rest + 0.1, rest)
    lam = np.concatenate([np.full(size, nu), rest])
    U, _ = np.linalg.qr(rng.standard_normal((n, n)))
    A = (U * lam) @ U.T
    A = 0.5 * (A + A.T)
    d = float(np.min(np.abs(rest - nu)))
    while True:
        E = rng.standard_normal((n, n))
        E = 0.5 * (E + E.T)
        E *= rng.uniform(0.0, 0.6) * d / np.linalg.norm(E, 2)
        B = A + E
        if np.linalg.eigvalsh(B).min() >= 0.0:
            return A, B, nu


def projector_ensemble(samples: int = 10_000, max_dim: int = 12, seed: int = 0) -> EnsembleReport:
    """Check the projector bound and the eigenvalue shift bound on a seeded random ensemble."""
    children = np.random.SeedSequence(seed).spawn(samples)
    dims = np.empty(samples, dtype=np.int64)
    ratios = np.full(samples, np.nan)
    minmax = np.empty(samples, dtype=bool)
    verdicts = []
    for i, child in enumerate(children):
        A, B, nu = random_pair(np.random.default_rng(child), max_dim)
        r = projector_check(A, B, nu)
        dims[i] = len(A)
        minmax[i] = r.minmax_ok
        verdicts.append(r.verdict)
        if r.verdict != PRECONDITION_VIOLATED:
            ratios[i] = r.distance / r.bound if r.bound > 0 else 0.0
    verdicts = tuple(verdicts)
    adm = ~np.isnan(ratios)
    return EnsembleReport(
        samples=samples,
        admissible=int(adm.sum()),
        violations=sum(v == VIOLATED for v in verdicts),
        minmax_violations=int((~minmax).sum()),
        max_ratio=float(ratios[adm].max()) if adm.any() else 0.0,
        seed=seed, dims=dims, ratios=ratios, verdicts=verdicts, minmax=minmax)


# --- eigenfunction distances -----------------------------------------------------


@dataclass(frozen=True)
class QuadratureContext:
    """Reference mesh and the two maps that push eigenfunctions forward."""

    mesh: TriangleMesh
    phi: Transformation
    phi_t: Transformation
    quad_order: int = 7


def _reference_points(ctx: QuadratureContext):
    rule = triangle_rule(ctx.quad_order)
    pts = physical_points(ctx.mesh.nodes, ctx.mesh.triangles, rule)
    dx = (np.abs(triangle_areas(ctx.mesh.nodes, ctx.mesh.triangles))[:, None] * rule.weights).ravel()
    vals_at_q = rule.bary  # P1 basis values
    return pts, dx, vals_at_q


def _eval_p1(mesh, nodal, bary):
    # nodal: (k, n_nodes) -> (k, ne * nq)
    return np.einsum("kej,qj->keq", nodal[:, mesh.triangles], bary).reshape(nodal.shape[0], -1)


def _jac_det(t: Transformation, pts):
    return np.abs(np.linalg.det(t.jacobian(pts)))


def _cross_terms(dec, dec_t, idx, ctx: QuadratureContext):
    """Values needed for the union-domain L2 comparison of pushed-forward eigenfunctions.

    Returns ``(u_moved, inside, u_t, g_t, u, outside_phi_t, g, dx)`` on the
    reference quadrature points: ``u_moved`` is ``u(phi^-1(phi_t(x)))``
    (zero where ``phi_t(x)`` leaves ``phi(Omega)``), ``outside_phi_t`` flags
    points with ``phi(x)`` outside ``phi_t(Omega)``.
    """
    m = ctx.mesh
    pts, dx, bary = _reference_points(ctx)
    flat = pts.reshape(-1, 2)
    U = dec.nodal(idx)
    Ut = dec_t.nodal(idx)
    u = _eval_p1(m, U, bary)
    u_t = _eval_p1(m, Ut, bary)
    if ctx.phi is ctx.phi_t:
        g = _jac_det(ctx.phi, flat)
        return u, np.ones(len(flat), bool), u_t, g, u, np.zeros(len(flat), bool), g, dx
    tri = Triangulation(m.nodes[:, 0], m.nodes[:, 1], m.triangles)
    finder = tri.get_trifinder()
    g = _jac_det(ctx.phi, flat)
    g_t = _jac_det(ctx.phi_t, flat)
    back = ctx.phi.inverse(ctx.phi_t.map(flat))
    ok = np.all(np.isfinite(back), axis=1)
    inside = np.zeros(len(flat), dtype=bool)
    inside[ok] = finder(back[ok, 0], back[ok, 1]) >= 0
    u_moved = np.zeros_like(u)
    for r in range(U.shape[0]):
        interp = LinearTriInterpolator(tri, U[r], trifinder=finder)
        vals = interp(back[inside, 0], back[inside, 1])
        u_moved[r, inside] = np.ma.filled(vals, 0.0)
    fwd = ctx.phi_t.inverse(ctx.phi.map(flat))
    okf = np.all(np.isfinite(fwd), axis=1)
    in_t = np.zeros(len(flat), dtype=bool)
    in_t[okf] = finder(fwd[okf, 0], fwd[okf, 1]) >= 0
    return u_moved, inside, u_t, g_t, u, ~in_t, g, dx


def eigenfunction_distance(dec: EigenDecomposition, dec_t: EigenDecomposition,
                           cluster: Sequence[int], ctx: QuadratureContext) -> float:
    """L2 distance of pushed-forward eigenfunctions on the union of the two domains.

    For a single index the sign of the second function is aligned with the
    first.  For a cluster of indices the spectral norm of the difference of
    the two orthogonal projectors onto the cluster spans is returned.
    """
    idx = [int(i) for i in cluster]
    if not idx:
        raise ClusterError("empty cluster")
    for d, name in ((dec, "first"), (dec_t, "second")):
        groups = find_clusters(d.lambdas)
        members = {i for grp in groups if set(grp) & set(idx) for i in grp}
        if members != set(idx):
            raise ClusterError(f"indices {idx} do not form whole clusters of the {name} decomposition "
                               f"(clusters touched: {sorted(members)})")
    u_moved, inside, u_t, g_t, u, out_t, g, dx = _cross_terms(dec, dec_t, idx, ctx)
    wt = dx * g_t
    if len(idx) == 1:
        c = float(np.sum(wt * u_moved[0] * u_t[0]))
        s = -1.0 if c < 0 else 1.0
        t1 = float(np.sum(wt * (u_moved[0] - s * u_t[0]) ** 2))
        t2 = float(np.sum(dx * g * out_t * u[0] ** 2))
        return float(np.sqrt(t1 + t2))
    C = (u_moved * wt) @ u_t.T
    smin = float(np.linalg.svd(C, compute_uv=False).min())
    return float(np.sqrt(max(0.0, 1.0 - min(smin, 1.0) ** 2)))


# --- rate fitting ------------------------------------------------------------------


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float
    n: int


def fit_rate(xs, ys) -> RateFit:
    """Least-squares line through ``(log x, log y)``."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise FitError("xs and ys must be 1-D of equal length")
    if x.size < 3:
        raise FitError(f"need at least 3 points, got {x.size}")
    if np.any(x <= 0) or np.any(y <= 0) or not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise FitError("rate fits need finite positive data")
    res = stats.linregress(np.log(x), np.log(y))
    return RateFit(float(res.slope), float(res.intercept), float(res.rvalue ** 2), int(x.size))


# --- property (P) -------------------------------------------------------------------


@dataclass(frozen=True)
class PropertyPFit:
    gamma1_hat: float
    gamma2_hat: float
    fit1: RateFit
    fit2: RateFit
    used: int


def _norms(dec: EigenDecomposition, m: TriangleMesh, fields, q0: float, quad_order: int = 7):
    from .assembly import basis_gradients, element_fields

    U = dec.nodal()
    grads, _ = basis_gradients(m.nodes, m.triangles)
    grad_u = np.einsum("kej,ejd->ked", U[:, m.triangles], grads)  # (k, ne, 2)
    gnorm = np.linalg.norm(grad_u, axis=2)
    if np.isinf(q0):
        return np.abs(U).max(axis=1), gnorm.max(axis=1)
    rule = triangle_rule(quad_order)
    _, w, g, _ = element_fields(m, fields, quad_order)
    area = np.abs(triangle_areas(m.nodes, m.triangles))
    uq = np.einsum("kej,qj->keq", U[:, m.triangles], rule.bary)
    wq = area[:, None] * w[None, :] * g
    n1 = np.sum(wq * np.abs(uq) ** q0, axis=(1, 2)) ** (1.0 / q0)
    n2 = np.sum(wq.sum(axis=1) * gnorm ** q0, axis=1) ** (1.0 / q0)
    return n1, n2


def property_p_fit(dec: EigenDecomposition, m: TriangleMesh, fields, q0: float,
                   quad_order: int = 7) -> PropertyPFit:
    """Empirical (P1)/(P2) exponents from ``log |psi_n|`` and ``log |grad psi_n|`` versus ``log lambda_n``.

    Eigenpairs with non-positive eigenvalue are dropped.  For ``q0 = inf``
    the nodal maximum of ``|psi_n|`` and the element maximum of the
    (piecewise constant) gradient norm are used.
    """
    keep = np.flatnonzero(dec.lambdas > 1e-8 * max(1.0, float(np.max(np.abs(dec.lambdas)))))
    if keep.size < 10:
        raise InputError(f"need at least 10 eigenpairs with positive eigenvalue, got {keep.size}")
    sub = EigenDecomposition(dec.lambdas[keep], dec.vectors[keep], dec.residuals[keep],
                             dec.dof_map, dec.n_nodes)
    n1, n2 = _norms(sub, m, fields, q0, quad_order)
    f1 = fit_rate(sub.lambdas, n1)
    f2 = fit_rate(sub.lambdas, n2)
    return PropertyPFit(f1.slope, f2.slope - 0.5, f1, f2, int(keep.size))


# --- exponent calculus -------------------------------------------------------------


def n_alpha(N: int, alpha: float) -> float:
    return N + (N - 1) * (1.0 / alpha - 1.0)


def b_alpha(N: int, alpha: float) -> float:
    """Rate exponent ``1/2 - 5 (1 - alpha) / (N - 1 + alpha)`` (valid up to ``alpha = 1``)."""
    if N < 2 or not 0.0 < alpha <= 1.0:
        raise InputError(f"need N >= 2 and alpha in (0, 1], got N={N}, alpha={alpha}")
    return 0.5 - 5.0 * (1.0 - alpha) / (N - 1 + alpha)


def beta_norms(beta: Sequence[int], alpha: float):
    beta = tuple(int(b) for b in beta)
    if any(b < 0 for b in beta):
        raise InputError("multi-index entries must be non-negative")
    return sum(beta[:-1]) + alpha * beta[-1], sum(beta)


def tau(m: int, beta, M: float, p: float, q: float, alpha: float) -> float:
    """Interpolation exponent ``(|beta|_a + a M (1/p - 1/q)) / (|beta|_a + a (m - |beta|))``."""
    ba, b = beta_norms(beta, alpha)
    if b >= m:
        raise InputError("need |beta| < m")
    inv = lambda t: 0.0 if np.isinf(t) else 1.0 / t  # noqa: E731
    return (ba + alpha * M * (inv(p) - inv(q))) / (ba + alpha * (m - b))


def rho(m: int, beta, M: float, p0: float, alpha: float) -> float:
    """``inf { tau(m, beta, M, p, inf) + (M/m)(1/p0 - 1/p) : p > max(M / (m - |beta|), p0) }``.

    The objective is affine in ``t = 1/p`` on an open interval, so the
    infimum is the smaller of the two endpoint limits.
    """
    ba, b = beta_norms(beta, alpha)
    if b >= m:
        raise InputError("need |beta| < m")

    def objective(t):
        return (ba + alpha * M * t) / (ba + alpha * (m - b)) + (M / m) * (1.0 / p0 - t)

    t_max = min((m - b) / M, 1.0 / p0)
    return float(min(objective(0.0), objective(t_max)))


def bootstrap_sequence(p: float, p0: float, M: float, m: int, max_steps: int = 10_000) -> list[float]:
    """``p_1 = p``, ``p_{k+1} = max(p0, (sigma(p_k) + p_k) / 2)`` with ``sigma(t) = M t / (M + m t)``."""
    if not p >= p0 > 1:
        raise InputError("need p >= p0 > 1")
    seq = [float(p)]
    while seq[-1] > p0 and len(seq) < max_steps:
        t = seq[-1]
        seq.append(max(p0, 0.5 * (M * t / (M + m * t) + t)))
    return seq


@dataclass(frozen=True)
class ExponentTable:
    N: int
    alpha: float
    N_alpha: float
    b_alpha: float
    gamma_min: float
    q0_max: float
    rho: float
    tau: Callable = field(repr=False, compare=False)

    def tau_at(self, m, beta, p, q):
        return self.tau(m, beta, self.N_alpha, p, q)


def rate_exponent(N: int, alpha: float, p0: float = 2.0) -> ExponentTable:
    """Exponents of the cusp stability estimate for ``alpha`` in ``(1 - N/15, 1)``.

    ``rho`` is evaluated for ``m = 2``, ``beta = 0``, ``M = N_alpha`` and the
    given ``p0``.
    """
    N = int(N)
    if N < 2:
        raise InputError("N must be at least 2")
    lo = 1.0 - N / 15.0
    if not lo < alpha < 1.0:
        raise HypothesisError(f"alpha must lie in (1 - N/15, 1) = ({lo:.6g}, 1), got {alpha}")
    na = n_alpha(N, alpha)
    zero = (0,) * N
    return ExponentTable(
        N=N, alpha=float(alpha), N_alpha=na, b_alpha=b_alpha(N, alpha), gamma_min=na / 4.0,
        q0_max=(N - 1 + alpha) / (1.0 - alpha),
        rho=rho(2, zero, na, p0, alpha),
        tau=lambda m, beta, M, p, q: tau(m, beta, M, p, q, alpha),
    )
