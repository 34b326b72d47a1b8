"""Figure rendering for experiment runs.

One PNG per run, written next to the delimited output.  Figures are
documentation artifacts: every number they show is also in the CSV/JSON,
which remain the machine-readable contract.  The PNG date chunk is stripped
so reruns produce identical bytes.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import numpy as np
import matplotlib.pyplot as plt

_SAVE = dict(dpi=110, metadata={"Date": None})


def render_figure(kind: str, payload: dict, path: str) -> str:
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    try:
        _RENDERERS[kind](ax, payload)
        ax.set_title(kind)
        fig.tight_layout()
        fig.savefig(path, **_SAVE)
    finally:
        plt.close(fig)
    return path


def _field_sample(ax, p):
    ax.plot(p["arc"], p["values"], lw=1.0)
    ax.set_xlabel("position along segment")
    ax.set_ylabel("potential value")


def _sigma2(ax, p):
    k = np.asarray(p["k_grid"])
    ax.plot(k, p["spectrum_values"], lw=1.2)
    ax.set_xlabel("|k|")
    ax.set_ylabel("power spectrum")
    ax.annotate(f"effective constant = {p['sigma2']:.6g}",
                xy=(0.98, 0.95), xycoords="axes fraction", ha="right")


def _corrector(ax, p):
    lams = np.asarray(p["lambdas"])
    ax.loglog(lams, p["variances"], "o-", label="corrector second moment")
    if p.get("ratios") is not None:
        ax.loglog(lams, p["ratios"], "s--", label="moment / |log lambda|")
    ax.set_xlabel("lambda")
    ax.legend(fontsize=8)


def _simulate(ax, p):
    for eps, block in p["clouds"].items():
        ax.scatter(block[:, 0], block[:, 1], s=6, alpha=0.6, label=f"eps={eps:g}")
    ax.axvline(p["u_hom"], color="k", lw=0.8)
    ax.set_xlabel("Re")
    ax.set_ylabel("Im")
    ax.legend(fontsize=8)


def _rates(ax, p):
    t = np.asarray(p["table"])
    if not np.all(t[:, 1] > 0) or not np.isfinite(p["slope"]):
        ax.text(0.5, 0.5, "degenerate run: no positive errors to fit",
                ha="center", va="center", transform=ax.transAxes)
        return
    ax.loglog(t[:, 0], t[:, 1], "o", label="mean abs error")
    grid = np.array([t[:, 0].min(), t[:, 0].max()])
    fit = np.exp(p["intercept"]) * grid ** p["slope"]
    ax.loglog(grid, fit, "-", label=f"slope {p['slope']:.3f}")
    ax.set_xlabel("eps")
    ax.legend(fontsize=8)


def _dist_test(ax, p):
    vals = np.asarray(p["samples"])
    ax.hist(vals, bins=60, density=True, alpha=0.7)
    sd = p["target_sd"]
    if sd > 0:
        g = np.linspace(vals.min(), vals.max(), 200)
        ax.plot(g, np.exp(-g ** 2 / (2 * sd ** 2)) / (sd * np.sqrt(2 * np.pi)), "k-")
    ax.set_xlabel(p.get("axis_label", "sample"))


def _spde_var(ax, p):
    t = np.asarray(p["table"])
    ax.semilogx(t[:, 0], t[:, 1], "o-", label="variance at eps")
    ax.axhline(p["var_limit"], color="k", lw=0.8, label="limit variance")
    ax.set_xlabel("eps")
    ax.legend(fontsize=8)


def _validate(ax, p):
    rows = p["rows"]
    names = [r["criterion"] for r in rows]
    ratio = [abs(r["observed"] - r["expected"]) / r["tolerance"] if r["tolerance"]
             else 0.0 for r in rows]
    colors = ["tab:green" if r["pass"] else "tab:red" for r in rows]
    ax.barh(range(len(rows)), ratio, color=colors)
    ax.axvline(1.0, color="k", lw=0.8)
    ax.set_yticks(range(len(rows)), names, fontsize=7)
    ax.set_xlabel("|observed - expected| / tolerance")


_RENDERERS = {
    "field-sample": _field_sample,
    "sigma2": _sigma2,
    "corrector": _corrector,
    "simulate": _simulate,
    "rates": _rates,
    "dist-test": _dist_test,
    "spde-var": _spde_var,
    "validate": _validate,
}
