"""Experiment drivers behind ``cusp-spectra run``.

Each driver writes ``report.csv`` (header first, rows appended in order so a
failure leaves the finished rows on disk), ``report.svg`` and
``summary.txt`` into the output directory, and returns an
:class:`ExperimentResult`.  Numbers are written with 17 significant digits.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import plotting
from .assembly import DIRICHLET, assemble
from .config import RunConfig, dumps
from .eigensolve import solve_cached, solve_dense, solve_lowest
from .errors import ConfigError
from .geometry import (CuspGeometry, bump_area, bump_graph, cusp_cap_measure, flat_graph,
                       graph_morph)
from .mesh import cells_for_diameter, mesh_rectangle, mesh_reference, write_mesh
from .metrics import (QuadratureContext, _norms, eigenfunction_distance, fit_rate,
                      projector_ensemble, property_p_fit, rate_exponent, schatten_distance)
from .transform import CoefficientField, dilation, identity, pair_fields, phi_eps, pullback
from .vicinity import conjugate_exponent, delta_q

log = logging.getLogger("cusp_spectra")

#: margin subtracted from predicted exponents before comparing with fitted slopes
RATE_MARGIN = 0.05

CUSP_COLUMNS = ("eps", "cap_measure", "delta_q", "lambda1", "lambda2", "lambda3",
                "schatten_k", "schatten_value", "eig1_l2_dist")


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


class ReportWriter:
    """CSV writer that flushes every row."""

    def __init__(self, path: Path, columns):
        self.path = path
        self.columns = tuple(columns)
        self._fh = path.open("w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(self.columns)
        self._fh.flush()

    def row(self, **values):
        extra = set(values) - set(self.columns)
        if extra:
            raise KeyError(f"unknown report columns {sorted(extra)}")
        self._w.writerow([fmt(values.get(c)) for c in self.columns])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class ExperimentResult:
    name: str
    out_dir: Path
    summary: dict = field(default_factory=dict)
    cache_hits: int = 0

    @property
    def csv_path(self) -> Path:
        return self.out_dir / "report.csv"

    @property
    def svg_path(self) -> Path:
        return self.out_dir / "report.svg"

    @property
    def summary_path(self) -> Path:
        return self.out_dir / "summary.txt"


def write_summary(path: Path, title: str, items: dict) -> None:
    lines = [f"# {title}"]
    for key, val in items.items():
        lines.append(f"{key} = {fmt(val)}")
    path.write_text("\n".join(lines) + "\n")


def _prepare(cfg: RunConfig, out_dir) -> tuple[Path, Path | None]:
    out = Path(out_dir if out_dir is not None else cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(dumps(cfg))
    cache = None
    if cfg.run.cache:
        cache = out / "cache"
        cache.mkdir(exist_ok=True)
    return out, cache


def _solve(system, cfg: RunConfig, cache: Path | None, tag: str):
    path = None if cache is None else cache / f"eigs_{tag}.txt"
    return solve_cached(system, cfg.solver.count, cfg.solver.tol, path, log.info)


# --- square sanity -----------------------------------------------------------------


def analytic_square(count: int, side: float = 1.0) -> np.ndarray:
    """Lowest Dirichlet eigenvalues ``pi^2 (m^2 + n^2) / side^2`` of a square."""
    r = int(math.ceil(math.sqrt(count))) + 2
    vals = sorted(math.pi ** 2 * (m * m + n * n) / side ** 2
                  for m in range(1, r + 1) for n in range(1, r + 1))
    return np.array(vals[:count])


def dense_crosscheck(cells: int = 12, count: int = 20) -> float:
    """Largest relative gap between the sparse and dense solvers on a small square."""
    f = pullback(identity(), CoefficientField.identity())
    sys = assemble(mesh_rectangle(nx=cells), f, DIRICHLET, 3)
    sparse = solve_lowest(sys, count).lambdas
    dense = solve_dense(sys, count).lambdas
    return float(np.max(np.abs(sparse - dense) / np.abs(dense)))


def dilation_equivalence(h: float, factor: float = 1.3, count: int = 10):
    """Eigenvalues of a dilated square: pulled back to the unit square versus meshed directly.

    Returns ``(pulled, direct, analytic)``.  Both meshes have cell diameter
    at most ``h`` in their own coordinates, so the direct mesh is finer than
    the image of the reference mesh and the two discretization errors differ.
    """
    n = cells_for_diameter(1.0, h)
    ref = mesh_rectangle(nx=n)
    f = pullback(dilation(factor), CoefficientField.identity())
    pulled = solve_lowest(assemble(ref, f, DIRICHLET, 3), count).lambdas
    n_direct = cells_for_diameter(factor, h)
    direct_mesh = mesh_rectangle(0.0, factor, 0.0, factor, nx=n_direct)
    plain = pullback(identity(), CoefficientField.identity())
    direct = solve_lowest(assemble(direct_mesh, plain, DIRICHLET, 3), count).lambdas
    return pulled, direct, analytic_square(count, factor)


def run_square_sanity(cfg: RunConfig, out_dir=None) -> ExperimentResult:
    out, cache = _prepare(cfg, out_dir)
    res = ExperimentResult("square_sanity", out)
    n = cells_for_diameter(1.0, cfg.discretization.h)
    mesh = mesh_rectangle(nx=n)
    f = pullback(identity(), CoefficientField.identity())
    sys = assemble(mesh, f, DIRICHLET, cfg.discretization.quad_order)
    dec, hit = _solve(sys, cfg, cache, f"square_{n}")
    res.cache_hits += hit
    exact = analytic_square(cfg.solver.count)
    rel = (dec.lambdas - exact) / exact
    with ReportWriter(res.csv_path, ("n", "lambda", "analytic", "rel_error")) as w:
        for i, (lam, ex, r) in enumerate(zip(dec.lambdas, exact, rel), start=1):
            w.row(n=i, **{"lambda": lam}, analytic=ex, rel_error=r)
    plotting.spectrum_comparison(res.svg_path, dec.lambdas, exact,
                                 f"Dirichlet Laplacian on the unit square, {n}x{n} cells")
    summary = {
        "cells_per_side": n,
        "h_max": mesh.h_max,
        "lambda1_rel_error": rel[0],
        "lambda2_rel_error": rel[1] if len(rel) > 1 else None,
        "lambda3_rel_error": rel[2] if len(rel) > 2 else None,
        "max_residual": float(dec.residuals.max()),
        "dense_crosscheck_max_rel_diff": dense_crosscheck(),
    }
    if dec.count >= 10:
        lo = 5
        weyl = fit_rate(np.arange(lo, dec.count + 1), dec.lambdas[lo - 1:])
        summary["weyl_slope"] = weyl.slope
        summary["weyl_slope_expected"] = 1.0
    res.summary = summary
    write_summary(res.summary_path, "square_sanity", summary)
    return res


# --- Lipschitz graph domains ---------------------------------------------------------


def run_lipschitz_rate(cfg: RunConfig, out_dir=None) -> ExperimentResult:
    out, cache = _prepare(cfg, out_dir)
    res = ExperimentResult("lipschitz_rate", out)
    lc = cfg.lipschitz
    radii = sorted(lc.radii, reverse=True)
    lip = max(1.0, 2.0 * lc.kappa * max(radii))
    source = flat_graph(1.0, 0.0, 0.5, (0.0, 1.0), lipschitz_bound=lip)
    n = cells_for_diameter(1.0, cfg.discretization.h)
    mesh = mesh_rectangle(nx=n)
    coef = CoefficientField.identity()
    qo = cfg.discretization.quad_order
    base_f = pullback(identity(), coef)
    base, hit = _solve(assemble(mesh, base_f, DIRICHLET, qo), cfg, cache, f"graph_ref_{n}")
    res.cache_hits += hit
    k = cfg.solver.k
    q = conjugate_exponent(cfg.solver.q0)

    def level(r):
        target = bump_graph(1.0, lc.kappa * r * r, lc.center, r, lipschitz_bound=lip)
        t = graph_morph(source, target)
        f = pullback(t, coef)
        dec, hit = _solve(assemble(mesh, f, DIRICHLET, qo), cfg, cache, f"graph_r{r:.17g}")
        return target, f, dec, hit

    with ThreadPoolExecutor(max_workers=cfg.run.workers) as pool:
        solved = list(pool.map(level, radii))
    cols = ("radius", "amplitude", "sym_diff", "delta_q", "lambda1", "schatten_k", "schatten_value")
    xs, ys, sufficient = [], [], []
    with ReportWriter(res.csv_path, cols) as w:
        for r, (target, f, dec, hit) in zip(radii, solved):
            res.cache_hits += hit
            amp = lc.kappa * r * r
            area = bump_area(amp, r)
            sd = schatten_distance(base.lambdas, dec.lambdas, k)
            dq = delta_q(pair_fields(base_f, f), base_f, mesh, q, qo).delta
            xs.append(area)
            ys.append(sd.value)
            sufficient.append(sd.sufficient)
            w.row(radius=r, amplitude=amp, sym_diff=area, delta_q=dq, lambda1=dec.lambdas[0],
                  schatten_k=k, schatten_value=sd.value)
        fit = fit_rate(xs, ys)
        w.row(radius="fit", schatten_k=k, schatten_value=fit.slope)
    predicted = 0.5 - (0.0 if math.isinf(cfg.solver.q0) else 1.0 / cfg.solver.q0)
    plotting.loglog_fit(res.svg_path, xs, ys, fit.slope, fit.intercept,
                        xlabel=r"$|\Omega_1 \triangle \Omega_2|$",
                        ylabel=f"Schatten distance, k = {k}",
                        title="Graph domains with a shrinking C^{1,1} bump",
                        reference=(predicted, f"exponent {predicted:g}"))
    res.summary = {
        "fitted_slope": fit.slope, "intercept": fit.intercept, "r2": fit.r2,
        "predicted_exponent": predicted, "threshold": predicted - RATE_MARGIN,
        "slope_ok": fit.slope >= predicted - RATE_MARGIN,
        "truncation_sufficient": all(sufficient),
    }
    write_summary(res.summary_path, "lipschitz_rate", res.summary)
    return res


# --- cusp sweep ---------------------------------------------------------------------


def cusp_mesh(cfg: RunConfig, geo: CuspGeometry, levels):
    d = cfg.discretization
    return mesh_reference(geo, d.h, d.grading, levels, axis_grading=d.axis_grading)


def run_cusp_rate(cfg: RunConfig, out_dir=None) -> ExperimentResult:
    out, cache = _prepare(cfg, out_dir)
    res = ExperimentResult("cusp_rate", out)
    g = cfg.geometry
    geo = CuspGeometry(g.alpha, g.eps0, g.dim)
    geo.check_rate_hypothesis()
    table = rate_exponent(g.dim, g.alpha)
    levels = list(g.eps_levels)
    ref = g.eps_ref
    if any(e < 4.0 * ref for e in levels):
        raise ConfigError(f"every level must be at least 4 * eps_ref = {4 * ref:g}")
    mesh = cusp_mesh(cfg, geo, levels + [ref])
    write_mesh(mesh, out / "mesh.txt")
    log.info("mesh: %d nodes, %d triangles, h_max %.4g", mesh.n_nodes, mesh.n_triangles, mesh.h_max)
    coef = CoefficientField.identity()
    qo = cfg.discretization.quad_order

    def level(e):
        t = phi_eps(geo, e)
        f = pullback(t, coef)
        dec, hit = _solve(assemble(mesh, f, DIRICHLET, qo), cfg, cache, f"cusp_eps{e:.17g}")
        log.info("eps %.6g solved, lambda1 %.12g", e, dec.lambdas[0])
        return t, f, dec, hit

    with ThreadPoolExecutor(max_workers=cfg.run.workers) as pool:
        solved = list(pool.map(level, [ref] + levels))
    t_ref, f_ref, d_ref, hit = solved[0]
    res.cache_hits += hit
    k = cfg.solver.k
    q = conjugate_exponent(cfg.solver.q0)
    f_id = pullback(phi_eps(geo, geo.eps0), coef)
    caps, values, dists, lam1, sufficient, to_eps0 = [], [], [], [], [], {}
    with ReportWriter(res.csv_path, CUSP_COLUMNS) as w:
        for e, (t, f, dec, hit) in zip(levels, solved[1:]):
            res.cache_hits += hit
            cap = cusp_cap_measure(e, geo)
            dq = delta_q(pair_fields(f, f_ref), f, mesh, q, qo).delta
            to_eps0[e] = delta_q(pair_fields(f_id, f), f_id, mesh, q, qo).delta
            sd = schatten_distance(dec.lambdas, d_ref.lambdas, k)
            dist = eigenfunction_distance(dec, d_ref, [0], QuadratureContext(mesh, t, t_ref, qo))
            caps.append(cap)
            values.append(sd.value)
            dists.append(dist)
            lam1.append(dec.lambdas[0])
            sufficient.append(sd.sufficient)
            w.row(eps=e, cap_measure=cap, delta_q=dq, lambda1=dec.lambdas[0],
                  lambda2=dec.lambdas[1], lambda3=dec.lambdas[2], schatten_k=k,
                  schatten_value=sd.value, eig1_l2_dist=dist)
        fit = fit_rate(caps, values)
        w.row(eps="fit", schatten_k=k, schatten_value=fit.slope)
    plotting.loglog_fit(res.svg_path, caps, values, fit.slope, fit.intercept,
                        xlabel=r"$|\Omega \setminus \Omega_\epsilon|$",
                        ylabel=f"Schatten distance to eps = {ref:g}, k = {k}",
                        title=f"Cusp alpha = {g.alpha:g}: eigenvalue convergence",
                        reference=(table.b_alpha, f"b(alpha) = {table.b_alpha:.4f}"))
    # levels are decreasing, so distances should decrease along the list
    summary = {
        "fitted_slope": fit.slope, "intercept": fit.intercept, "r2": fit.r2,
        "b_alpha": table.b_alpha, "threshold": table.b_alpha - RATE_MARGIN,
        "slope_ok": fit.slope >= table.b_alpha - RATE_MARGIN,
        "eig1_dist_monotone": all(b < a for a, b in zip(dists, dists[1:])),
        "lambda1_monotone": all(b <= a for a, b in zip(lam1, lam1[1:])) and lam1[-1] >= d_ref.lambdas[0],
        "truncation_sufficient": all(sufficient),
        "N_alpha": table.N_alpha, "gamma_min": table.gamma_min, "q0_max": table.q0_max,
        "mesh_nodes": mesh.n_nodes, "mesh_triangles": mesh.n_triangles,
    }
    for e, v in to_eps0.items():
        summary[f"delta_q_eps0_to_{fmt(e)}"] = v
    res.summary = summary
    write_summary(res.summary_path, "cusp_rate", summary)
    return res


# --- projector ensemble ------------------------------------------------------------


def run_projector_ensemble(cfg: RunConfig, out_dir=None) -> ExperimentResult:
    out, _ = _prepare(cfg, out_dir)
    res = ExperimentResult("projector_ensemble", out)
    ec = cfg.ensemble
    rep = projector_ensemble(ec.samples, ec.max_dim, cfg.solver.seed)
    cols = ("dim", "samples", "admissible", "violations", "minmax_violations", "max_ratio")
    verdicts = np.array(rep.verdicts)
    with ReportWriter(res.csv_path, cols) as w:
        for d in range(2, ec.max_dim + 1):
            sel = rep.dims == d
            adm = sel & ~np.isnan(rep.ratios)
            w.row(dim=d, samples=int(sel.sum()), admissible=int(adm.sum()),
                  violations=int(np.sum(verdicts[sel] == "violated")),
                  minmax_violations=int(np.sum(~rep.minmax[sel])),
                  max_ratio=float(rep.ratios[adm].max()) if adm.any() else 0.0)
        w.row(dim="all", samples=rep.samples, admissible=rep.admissible, violations=rep.violations,
              minmax_violations=rep.minmax_violations, max_ratio=rep.max_ratio)
    plotting.ratio_histogram(res.svg_path, rep.ratios[~np.isnan(rep.ratios)],
                             f"Projector perturbation, {rep.admissible} admissible pairs")
    res.summary = {"samples": rep.samples, "admissible": rep.admissible,
                   "violations": rep.violations, "minmax_violations": rep.minmax_violations,
                   "max_ratio": rep.max_ratio, "seed": rep.seed}
    write_summary(res.summary_path, "projector_ensemble", res.summary)
    return res


# --- property (P) ---------------------------------------------------------------------


def run_property_p(cfg: RunConfig, out_dir=None) -> ExperimentResult:
    out, cache = _prepare(cfg, out_dir)
    res = ExperimentResult("property_p", out)
    coef = CoefficientField.identity()
    qo = cfg.discretization.quad_order
    g = cfg.geometry
    if cfg.property_p.domain == "square":
        mesh = mesh_rectangle(nx=cells_for_diameter(1.0, cfg.discretization.h))
        f = pullback(identity(), coef)
        gamma_ref = g.dim / 4.0
        tag = f"pp_square_{mesh.n_nodes}"
    else:
        geo = CuspGeometry(g.alpha, g.eps0, g.dim)
        mesh = cusp_mesh(cfg, geo, [g.eps_ref])
        f = pullback(phi_eps(geo, g.eps_ref), coef)
        gamma_ref = rate_exponent(g.dim, g.alpha).gamma_min
        tag = f"pp_cusp_{fmt(g.eps_ref)}"
    dec, hit = _solve(assemble(mesh, f, DIRICHLET, qo), cfg, cache, tag)
    res.cache_hits += hit
    fit = property_p_fit(dec, mesh, f, cfg.solver.q0, qo)
    n1, n2 = _norms(dec, mesh, f, cfg.solver.q0, qo)
    with ReportWriter(res.csv_path, ("n", "lambda", "psi_norm", "grad_norm")) as w:
        for i in range(dec.count):
            w.row(n=i + 1, **{"lambda": dec.lambdas[i]}, psi_norm=n1[i], grad_norm=n2[i])
        w.row(n="fit", psi_norm=fit.gamma1_hat, grad_norm=fit.gamma2_hat)
    plotting.growth_fit(res.svg_path, dec.lambdas, [n1, n2], [fit.fit1, fit.fit2],
                        [r"$\|\psi_n\|$", r"$\|\nabla\psi_n\|$"],
                        f"Eigenfunction growth, q0 = {fmt(cfg.solver.q0)}")
    res.summary = {"domain": cfg.property_p.domain, "q0": cfg.solver.q0,
                   "gamma1_hat": fit.gamma1_hat, "gamma2_hat": fit.gamma2_hat,
                   "r2_P1": fit.fit1.r2, "r2_P2": fit.fit2.r2,
                   "gamma_reference": gamma_ref, "gamma1_within": fit.gamma1_hat <= gamma_ref + 0.2,
                   "eigenpairs_used": fit.used}
    write_summary(res.summary_path, "property_p", res.summary)
    return res


RUNNERS = {
    "square_sanity": run_square_sanity,
    "lipschitz_rate": run_lipschitz_rate,
    "cusp_rate": run_cusp_rate,
    "projector_ensemble": run_projector_ensemble,
    "property_p": run_property_p,
}


def run_experiment(cfg: RunConfig, out_dir=None) -> ExperimentResult:
    cfg.validate()
    return RUNNERS[cfg.experiment](cfg, out_dir)
