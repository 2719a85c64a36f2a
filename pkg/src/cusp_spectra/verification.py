"""Acceptance checks, shared by ``cusp-spectra verify`` and the test suite.

Every check returns a :class:`CheckResult`.  Thresholds are keyword
arguments with the acceptance values as defaults, so callers can see exactly
what is being compared.
"""
from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .assembly import DIRICHLET, assemble
from .config import DiscretizationConfig, EnsembleConfig, LipschitzConfig, RunConfig, SolverConfig
from .eigensolve import solve_dense, solve_lowest
from .errors import HypothesisError
from .experiments import (analytic_square, dilation_equivalence, run_experiment)
from .geometry import CuspGeometry, c_alpha, h_eps
from .mesh import cells_for_diameter, mesh_rectangle, mesh_reference
from .metrics import b_alpha, projector_ensemble, rate_exponent, tau
from .transform import CoefficientField, dilation, identity, pair_fields, phi_eps, phi_eps_jacobian, phi_eps_map, pullback
from .vicinity import conjugate_exponent, delta_q


@dataclass
class CheckResult:
    criterion: int
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    elapsed: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        info = ", ".join(f"{k}={_short(v)}" for k, v in self.details.items())
        return f"{tag} [{self.criterion}] {self.name} ({self.elapsed:.1f} s): {info}"


def _short(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.elapsed = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def square_errors(h: float = 1.0 / 64, count: int = 10) -> np.ndarray:
    """Relative FEM eigenvalue errors on the unit square with cell diameter at most ``h``."""
    n = cells_for_diameter(1.0, h)
    f = pullback(identity(), CoefficientField.identity())
    lam = solve_lowest(assemble(mesh_rectangle(nx=n), f, DIRICHLET, 3), count).lambdas
    exact = analytic_square(count)
    return (lam - exact) / exact


@_timed
def check_square(h: float = 1.0 / 64, rel: float = 0.01, dense_rel: float = 1e-9,
                 dense_cells: int = 15, time_limit: float = 60.0) -> CheckResult:
    """Criterion 1: Dirichlet square eigenvalues and the dense-solver oracle."""
    t0 = time.perf_counter()
    n = cells_for_diameter(1.0, h)
    mesh = mesh_rectangle(nx=n)
    f = pullback(identity(), CoefficientField.identity())
    lam = solve_lowest(assemble(mesh, f, DIRICHLET, 3), 3).lambdas
    e1 = abs(lam[0] / (2 * math.pi ** 2) - 1)
    e23 = max(abs(lam[1] / (5 * math.pi ** 2) - 1), abs(lam[2] / (5 * math.pi ** 2) - 1))
    small = assemble(mesh_rectangle(nx=dense_cells), f, DIRICHLET, 3)
    k = small.ndof // 4
    gap = float(np.max(np.abs(solve_lowest(small, k).lambdas - solve_dense(small, k).lambdas)
                       / solve_dense(small, k).lambdas))
    wall = time.perf_counter() - t0
    ok = mesh.h_max <= h and e1 < rel and e23 < rel and small.ndof <= 200 and gap <= dense_rel and wall < time_limit
    return CheckResult(1, "square sanity", ok, dict(
        h_max=mesh.h_max, lambda1_err=e1, lambda23_err=e23, dense_dof=small.ndof,
        dense_gap=gap, seconds=wall))


@_timed
def check_projector(samples: int = 10_000, max_dim: int = 12, seed: int = 0,
                    time_limit: float = 30.0) -> CheckResult:
    """Criterion 2: projector perturbation bound and the min-max ingredient."""
    t0 = time.perf_counter()
    rep = projector_ensemble(samples, max_dim, seed)
    wall = time.perf_counter() - t0
    ok = rep.violations == 0 and rep.minmax_violations == 0 and rep.admissible > 0 and wall < time_limit
    return CheckResult(2, "projector lemma", ok, dict(
        samples=rep.samples, admissible=rep.admissible, violations=rep.violations,
        minmax_violations=rep.minmax_violations, max_ratio=rep.max_ratio, seconds=wall))


@_timed
def check_dilation(h: float = 1.0 / 64, factor: float = 1.3, count: int = 10,
                   multiple: float = 2.0) -> CheckResult:
    """Criterion 3: pulled-back versus direct eigenvalues on a dilated square.

    The allowed gap for each eigenvalue is ``multiple`` times the relative
    discretization error of the same index on the unit square at the same ``h``.
    """
    pulled, direct, _ = dilation_equivalence(h, factor, count)
    budget = multiple * np.abs(square_errors(h, count))
    gap = np.abs(pulled - direct) / direct
    ratio = gap / budget
    return CheckResult(3, "pull-back equivalence", bool(np.all(ratio <= 1.0)), dict(
        max_rel_gap=float(gap.max()), worst_gap_over_budget=float(ratio.max()), count=count))


def _fidelity_samples(geo: CuspGeometry, rng, n_eps: int, per_eps: int):
    """Random ``(eps, points)`` groups in the part of Omega_eps0 where phi_eps moves points."""
    r = geo.cap_radius
    for _ in range(n_eps):
        eps = float(rng.uniform(0.0, geo.eps0))
        x = rng.uniform(-1.2 * r, 1.2 * r, per_eps)
        y = rng.uniform(0.75, 1.0, per_eps) * geo.top(np.abs(x), geo.eps0)
        yield eps, np.column_stack([x, y])


@_timed
def check_transformation(alpha: float = 0.9, eps0: float = 0.2, points: int = 1000,
                         jac_rel: float = 1e-6, bracket_samples: int = 500, seed: int = 4,
                         fd_step: float = 1e-6, time_limit: float = 10.0) -> CheckResult:
    """Criterion 4: Jacobian against central differences, det >= 1, determinant ratio, bracket.

    Points closer than ``100 * fd_step`` to a kink of the map (the branch
    interface, the cap edge, the line ``|xbar| = eps^(1/alpha)`` or the top)
    are re-drawn, since a central difference straddling a kink is not a
    derivative.
    """
    t0 = time.perf_counter()
    geo = CuspGeometry(alpha, eps0)
    geo.check_lemma_hypotheses()
    rng = np.random.default_rng(seed)
    margin = 100 * fd_step
    jac_err, min_det, n_jac = 0.0, np.inf, 0
    while n_jac < points:
        eps = float(rng.uniform(0.0, geo.eps0))
        x = rng.uniform(-1.2, 1.2, 64) * geo.cap_radius
        y = rng.uniform(0.3, 1.0, 64) * geo.top(np.abs(x), geo.eps0)
        h = h_eps(np.abs(x), eps, geo)
        keep = ((np.abs(y - h) > margin) & (np.abs(np.abs(x) - eps ** (1 / alpha)) > margin)
                & (np.abs(np.abs(x) - geo.cap_radius) > margin)
                & (y < geo.top(np.abs(x), geo.eps0) - margin))
        p = np.column_stack([x, y])[keep][: points - n_jac]
        jac = phi_eps_jacobian(p, eps, geo)
        fd = np.empty_like(jac)
        for j in range(2):
            d = np.zeros(2)
            d[j] = fd_step
            fd[:, :, j] = (phi_eps_map(p + d, eps, geo) - phi_eps_map(p - d, eps, geo)) / (2 * fd_step)
        scale = np.abs(jac).max(axis=(1, 2))
        jac_err = max(jac_err, float((np.abs(fd - jac).max(axis=(1, 2)) / scale).max()))
        min_det = min(min_det, float(np.linalg.det(jac).min()))
        n_jac += len(p)

    bound = 2.0 / c_alpha(alpha) ** 2
    worst_ratio, moved = 0.0, 0
    for eps, p in _fidelity_samples(geo, rng, 20, 50):
        eps_lo = float(rng.uniform(0.0, eps))
        nudge = 1e-9 * rng.standard_normal(p.shape)
        det_hi = np.linalg.det(phi_eps_jacobian(p + nudge, eps, geo))
        det_lo = np.linalg.det(phi_eps_jacobian(p + nudge, eps_lo, geo))
        worst_ratio = max(worst_ratio, float((det_hi / det_lo).max()))
        moved += int(np.sum((det_hi != 1.0) | (det_lo != 1.0)))

    s = rng.uniform(0.0, geo.cap_radius, bracket_samples)
    e = rng.uniform(0.0, geo.eps0, bracket_samples)
    h = np.array([h_eps(np.array([si]), ei, geo)[0] for si, ei in zip(s, e)])
    gap = geo.eps0 - np.maximum(s ** alpha, e)
    mid = 1.0 - geo.eps0 - h
    bracket_ok = bool(np.all((c_alpha(alpha) * gap <= mid) & (mid <= gap)))
    wall = time.perf_counter() - t0
    ok = jac_err <= jac_rel and min_det >= 1.0 and worst_ratio <= bound and bracket_ok and wall < time_limit
    return CheckResult(4, "transformation fidelity", ok, dict(
        jacobian_points=n_jac, max_jac_rel_err=jac_err, min_det=min_det,
        max_det_ratio=worst_ratio, ratio_bound=bound, ratio_points_moved=moved, bracket_ok=bracket_ok, seconds=wall))


def _run(cfg: RunConfig, out: Path):
    return run_experiment(cfg, out)


def lipschitz_config(quick: bool = False) -> RunConfig:
    h = 1.0 / 32 if quick else 1.0 / 64
    return RunConfig(experiment="lipschitz_rate",
                     discretization=DiscretizationConfig(h=h, grading=1.0, axis_grading=0.0, quad_order=7),
                     solver=SolverConfig(count=20, k=4),
                     lipschitz=LipschitzConfig())


@_timed
def check_lipschitz(cfg: RunConfig | None = None, out: Path | None = None, min_slope: float = 0.45,
                    min_r2: float = 0.98, min_sizes: int = 4) -> CheckResult:
    """Criterion 5: Schatten distance against the symmetric difference for shrinking bumps."""
    cfg = cfg or lipschitz_config()
    with tempfile.TemporaryDirectory() as tmp:
        res = _run(cfg, Path(out or tmp))
    s = res.summary
    n = len(cfg.lipschitz.radii)
    ok = s["fitted_slope"] >= min_slope and s["r2"] >= min_r2 and n >= min_sizes
    return CheckResult(5, "Lipschitz rate", ok, dict(
        slope=s["fitted_slope"], r2=s["r2"], sizes=n, truncation_sufficient=s["truncation_sufficient"]))


def cusp_config() -> RunConfig:
    return RunConfig(experiment="cusp_rate")


@_timed
def check_cusp(cfg: RunConfig | None = None, out: Path | None = None, margin: float = 0.05,
               min_r2: float = 0.95, time_limit: float = 900.0) -> CheckResult:
    """Criterion 6: cusp sweep slope against ``b(alpha) - margin`` and ground-state monotonicity."""
    cfg = cfg or cusp_config()
    t0 = time.perf_counter()
    with tempfile.TemporaryDirectory() as tmp:
        res = _run(cfg, Path(out or tmp))
    wall = time.perf_counter() - t0
    s = res.summary
    b = b_alpha(cfg.geometry.dim, cfg.geometry.alpha)
    ok = (s["fitted_slope"] >= b - margin and s["r2"] >= min_r2 and s["eig1_dist_monotone"]
          and wall < time_limit)
    return CheckResult(6, "cusp rate", ok, dict(
        slope=s["fitted_slope"], threshold=b - margin, r2=s["r2"],
        eig1_monotone=s["eig1_dist_monotone"], truncation_sufficient=s["truncation_sufficient"],
        seconds=wall))


@_timed
def check_delta(alpha: float = 0.95, eps0: float = 0.2, h: float = 0.1, exact_tol: float = 1e-12,
                q0: float = math.inf,
                eps_path=(0.02, 0.05, 0.1, 0.15, 0.18, 0.195, 0.2)) -> CheckResult:
    """Criterion 7: zero on the diagonal, the ``w = 2`` hand case, monotone decay as eps -> eps0."""
    geo = CuspGeometry(alpha, eps0)
    coef = CoefficientField.identity()
    square = mesh_rectangle(nx=8)
    f_id = pullback(identity(), coef)
    zero = delta_q(pair_fields(f_id, f_id), f_id, square, 2.0).delta
    # phi~ = x / 2: g~ = 1/4 so w = 2, a~ = 4 I so S = I; delta = (1 + 1/2) |Omega|^(1/q)
    f_half = pullback(dilation(0.5), coef)
    hand = {q: 1.5 * square.total_area() ** (0.0 if math.isinf(q) else 1.0 / q) for q in (2.0, 3.0, math.inf)}
    got = {q: delta_q(pair_fields(f_id, f_half), f_id, square, q).delta for q in hand}
    hand_err = max(abs(got[q] - hand[q]) for q in hand)

    q = conjugate_exponent(q0)
    levels = [e for e in eps_path if e < eps0]
    mesh = mesh_reference(geo, h, 2.0, levels)
    f0 = pullback(phi_eps(geo, eps0), coef)
    zero_cusp = delta_q(pair_fields(f0, f0), f0, mesh, q).delta
    path = [delta_q(pair_fields(f0, pullback(phi_eps(geo, e), coef)), f0, mesh, q).delta for e in eps_path]
    monotone = all(b < a for a, b in zip(path, path[1:]))
    ok = zero == 0.0 and zero_cusp == 0.0 and hand_err <= exact_tol and monotone and path[-1] == 0.0
    return CheckResult(7, "delta_q correctness", ok, dict(
        self_distance=zero, self_distance_cusp=zero_cusp, hand_case_err=hand_err,
        monotone=monotone, first=path[0], last=path[-1]))


@_timed
def check_exponents(samples: int = 100, seed: int = 8) -> CheckResult:
    """Criterion 8: b(1) = 1/2, the tau reduction at beta = 0, rejection outside the alpha range."""
    b1 = b_alpha(2, 1.0) == 0.5 and b_alpha(3, 1.0) == 0.5
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        N = int(rng.integers(2, 5))
        alpha = float(rng.uniform(1.0 - N / 15.0, 1.0))
        M = rate_exponent(N, alpha).N_alpha
        m = int(rng.integers(1, 5))
        p = float(rng.uniform(1.0, 10.0))
        q = float(rng.uniform(p, 50.0))
        lhs = tau(m, [0] * N, M, p, q, alpha)
        rhs = M / m * (1.0 / p - 1.0 / q)
        worst = max(worst, abs(lhs - rhs) / max(abs(rhs), 1e-300))
    rejected = 0
    bad = [(2, 1.0 - 2 / 15.0), (2, 0.5), (2, 1.0), (2, 1.2), (3, 0.7), (3, 1.0)]
    for N, alpha in bad:
        try:
            rate_exponent(N, alpha)
        except HypothesisError:
            rejected += 1
    ok = b1 and worst <= 1e-12 and rejected == len(bad)
    return CheckResult(8, "exponent calculus", ok, dict(
        b1_exact=b1, tau_max_rel_err=worst, rejected=f"{rejected}/{len(bad)}"))


def determinism_configs(quick: bool = False) -> list[RunConfig]:
    cfgs = [
        RunConfig(experiment="square_sanity",
                  discretization=DiscretizationConfig(h=1.0 / 64, quad_order=3)),
        RunConfig(experiment="projector_ensemble", ensemble=EnsembleConfig(samples=2000, max_dim=12)),
        lipschitz_config(quick=True),
    ]
    if not quick:
        cfgs.append(cusp_config())
    return cfgs


@_timed
def check_determinism(configs=None, quick: bool = False) -> CheckResult:
    """Criterion 9: two fresh runs with the same seed give byte-identical CSV reports."""
    configs = configs if configs is not None else determinism_configs(quick)
    same = {}
    with tempfile.TemporaryDirectory() as tmp:
        for cfg in configs:
            cfg = replace(cfg, run=replace(cfg.run, cache=False))
            blobs = []
            for rep in ("a", "b"):
                res = _run(cfg, Path(tmp) / cfg.experiment / rep)
                blobs.append(res.csv_path.read_bytes())
            same[cfg.experiment] = blobs[0] == blobs[1]
    return CheckResult(9, "determinism", all(same.values()), same)


def run_all(quick: bool = False, report=print) -> list[CheckResult]:
    """Run every check in criterion order.  ``quick`` skips the cusp sweep and uses a coarser Lipschitz mesh."""
    checks = [check_square, check_projector, check_dilation, check_transformation]
    out = []
    for c in checks:
        out.append(c())
        report(out[-1].line())
    out.append(check_lipschitz(lipschitz_config(quick)))
    report(out[-1].line())
    if quick:
        report("SKIP [6] cusp rate (quick mode)")
    else:
        out.append(check_cusp())
        report(out[-1].line())
    for c in (check_delta, check_exponents):
        out.append(c())
        report(out[-1].line())
    out.append(check_determinism(quick=quick))
    report(out[-1].line())
    return out
