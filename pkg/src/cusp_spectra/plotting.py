"""Report figures.  Rendered with the Agg backend to self-contained SVG files.

SVG output is made byte-stable across runs by fixing the hash salt used for
element ids and dropping the creation date from the metadata.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "svg.hashsalt": "cusp-spectra",
    "svg.fonttype": "path",
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "figure.figsize": (6.0, 4.2),
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)
    return path


def loglog_fit(path, xs, ys, slope, intercept, *, xlabel, ylabel, title, reference=None):
    """Scatter of ``(x, y)`` on log axes with the fitted power law ``exp(intercept) x^slope``.

    ``reference`` is an optional ``(exponent, label)`` drawn as a dashed
    guide line through the leftmost point.
    """
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x = np.asarray(xs, dtype=float)
        y = np.asarray(ys, dtype=float)
        ax.loglog(x, y, "o", color="C0", label="measured")
        grid = np.geomspace(x.min(), x.max(), 50)
        ax.loglog(grid, np.exp(intercept) * grid ** slope, "-", color="C1",
                  label=f"fit, slope {slope:.3f}")
        if reference is not None:
            expo, label = reference
            i = int(np.argmin(x))
            ax.loglog(grid, y[i] * (grid / x[i]) ** expo, "--", color="0.4", label=label)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.legend(loc="best")
        return _save(fig, path)


def spectrum_comparison(path, computed, analytic, title):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        n = np.arange(1, len(computed) + 1)
        ax.plot(n, analytic, "s", mfc="none", color="0.3", label="analytic")
        ax.plot(n, computed, "o", ms=4, color="C0", label="P1 finite elements")
        ax.set_xlabel("index n")
        ax.set_ylabel(r"$\lambda_n$")
        ax.set_title(title)
        ax.legend(loc="best")
        return _save(fig, path)


def ratio_histogram(path, ratios, title):
    """Histogram of ``|P - Q|`` over the projector bound; everything left of 1 is within the bound."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        r = np.asarray(ratios, dtype=float)
        ax.hist(r, bins=np.linspace(0.0, max(1.0, float(r.max()) if r.size else 1.0), 41), color="C0")
        ax.axvline(1.0, color="C3", ls="--", label="bound")
        ax.set_xlabel(r"$\|P-Q\|$ / bound")
        ax.set_ylabel("samples")
        ax.set_title(title)
        ax.legend(loc="best")
        return _save(fig, path)


def growth_fit(path, lambdas, norms, fits, labels, title):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        lam = np.asarray(lambdas, dtype=float)
        grid = np.geomspace(lam.min(), lam.max(), 50)
        for i, (vals, fit, label) in enumerate(zip(norms, fits, labels)):
            ax.loglog(lam, vals, "o", ms=4, color=f"C{i}", label=label)
            ax.loglog(grid, np.exp(fit.intercept) * grid ** fit.slope, "-", color=f"C{i}",
                      label=f"slope {fit.slope:.3f}")
        ax.set_xlabel(r"$\lambda_n$")
        ax.set_ylabel("norm")
        ax.set_title(title)
        ax.legend(loc="best")
        return _save(fig, path)
