"""Figure rendering for the CLI report path.

Every renderer writes a PNG next to the delimited output.  Figures are a
convenience view; the CSV/JSON stay the machine-readable contract and
the reproducibility guarantee covers only those.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=130, metadata=_META)
    plt.close(fig)


def check_errors_figure(checks: dict, path) -> None:
    names = [k for k, v in checks.items() if "max_error" in v]
    vals = [max(checks[k]["max_error"], 1e-18) for k in names]
    tols = [checks[k]["tolerance"] for k in names]
    fig, ax = plt.subplots(figsize=(7, 3.2))
    idx = np.arange(len(names))
    ax.bar(idx, vals, color="#4878d0", label="max error")
    ax.plot(idx, tols, "r_", markersize=18, label="tolerance")
    ax.set_yscale("log")
    ax.set_xticks(idx, names, rotation=30, ha="right", fontsize=8)
    ax.legend(fontsize=8)
    ax.set_title("randomized group checks")
    _save(fig, path)


def density_figure(kern, path, gap: float = 1.0, extent: float = 3.0) -> None:
    from .group import GroupPoint

    n = 81
    xs = np.linspace(-extent, extent, n)
    grid = np.stack(np.meshgrid(xs, xs, indexing="ij"), axis=-1).reshape(-1, 2)
    if kern.sm.d == 2:
        vals = kern.density_batch(0.0, np.zeros(2), gap, grid).reshape(n, n)
    else:
        pts = np.zeros((grid.shape[0], kern.sm.d))
        pts[:, :2] = grid
        vals = kern.density_batch(0.0, np.zeros(kern.sm.d), gap, pts).reshape(n, n)
    fig, ax = plt.subplots(figsize=(4.4, 3.8))
    im = ax.imshow(vals.T, extent=[-extent, extent, -extent, extent],
                   origin="lower", cmap="viridis")
    fig.colorbar(im, ax=ax, label=f"density at gap {gap}")
    ax.set_xlabel("y1")
    ax.set_ylabel("y2")
    _save(fig, path)


def trajectories_figure(ensemble, path, max_paths: int = 25) -> None:
    fig, axes = plt.subplots(ensemble.d, 1, figsize=(6.4, 2.2 * ensemble.d),
                             sharex=True, squeeze=False)
    n = min(max_paths, ensemble.n_paths)
    for c in range(ensemble.d):
        ax = axes[c, 0]
        for p in range(n):
            ax.plot(ensemble.times, ensemble.states[p, :, c],
                    lw=0.6, alpha=0.6, color="#4878d0")
        ax.plot(ensemble.times, ensemble.states[:, :, c].mean(axis=0),
                lw=1.8, color="#d65f5f", label="ensemble mean")
        ax.set_ylabel(f"x{c + 1}")
        if c == 0:
            ax.legend(fontsize=8)
    axes[-1, 0].set_xlabel("t")
    _save(fig, path)


def residual_figure(entries, path) -> None:
    fig, ax = plt.subplots(figsize=(4.6, 3.2))
    labels = [e["label"] for e in entries]
    vals = [e["estimate"] for e in entries]
    errs = [3.0 * e["se"] for e in entries]
    ax.bar(range(len(vals)), vals, yerr=errs, capsize=6, color="#4878d0")
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xticks(range(len(labels)), labels, fontsize=9)
    ax.set_ylabel("martingale residual (3 SE bars)")
    _save(fig, path)


def green_compare_figure(rows, path) -> None:
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    T = [r["T"] for r in rows]
    ax.errorbar(T, [r["mc"] for r in rows], yerr=[3 * r["mc_se"] for r in rows],
                fmt="o", capsize=5, label="Monte Carlo (3 SE)")
    ax.plot(T, [r["quadrature"] for r in rows], "s--", label="quadrature")
    ax.set_xlabel("window T")
    ax.set_ylabel("E integral of f")
    ax.legend(fontsize=8)
    _save(fig, path)


def lp_figure(per_bump, path) -> None:
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    for entry in per_bump:
        js = sorted(int(j) for j in entry["ratios"])
        ax.plot(js, [entry["ratios"][str(j)] for j in js], "o-",
                label=f"bump {entry['bump']}", lw=1.0, ms=3)
    ax.set_xlabel("dyadic window j")
    ax.set_ylabel("||K^j f||_p / ||f||_p")
    ax.legend(fontsize=7)
    _save(fig, path)


def sup_bound_figure(rows, path) -> None:
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    T = [r["T"] for r in rows]
    ax.plot(T, [r["sup"] for r in rows], "o-", label="sup |G^T f|")
    ax.plot(T, [r["scaled_norm"] for r in rows], "s--",
            label="T^{1-dbar/2p} ||f||_p")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("window T")
    ax.legend(fontsize=8)
    _save(fig, path)


def law_distance_figure(report, path) -> None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7.4, 3.0))
    times = [e.time for e in report.entries]
    ax1.plot(times, [e.energy for e in report.entries], "o-")
    ax1.set_xlabel("t")
    ax1.set_ylabel("energy distance")
    ax2.plot(times, [e.energy_pvalue for e in report.entries], "o-")
    ax2.axhline(0.01, color="r", lw=0.8, label="1% level")
    ax2.set_ylim(0, 1.05)
    ax2.set_xlabel("t")
    ax2.set_ylabel("permutation p-value")
    ax2.legend(fontsize=8)
    _save(fig, path)


def localize_figure(counts, path) -> None:
    fig, ax = plt.subplots(figsize=(4.6, 3.2))
    ax.hist(counts, bins=np.arange(counts.min(), counts.max() + 2) - 0.5,
            color="#4878d0", rwidth=0.9)
    ax.set_xlabel("stopping times per path")
    ax.set_ylabel("paths")
    _save(fig, path)
