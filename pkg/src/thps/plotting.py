"""Report figures rendered to PNG files with the Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from mpl_toolkits.mplot3d.art3d import Poly3DCollection  # noqa: E402

from .io import reference_subtriangulation  # noqa: E402


def fit_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def plot_convergence(rows, path, title="relative max error"):
    """Log-log error against mesh size, one series per degree, with fitted slopes."""
    fig, ax = plt.subplots(figsize=(5.5, 4.2))
    for n in sorted({int(r["n"]) for r in rows}):
        sel = sorted((r for r in rows if int(r["n"]) == n), key=lambda r: r["h"])
        h = np.array([r["h"] for r in sel], dtype=float)
        e = np.array([r["err_Linf"] for r in sel], dtype=float)
        label = f"n = {n}"
        if len(h) > 1:
            label += f" (slope {fit_slope(h, e):.2f})"
        (line,) = ax.loglog(h, e, "o-", label=label)
        if len(h) > 1:
            ref = e[-1] * (h / h[-1]) ** (n - 1)
            ax.loglog(h, ref, ":", color=line.get_color(), lw=1)
    ax.set_xlabel("mesh size h")
    ax.set_ylabel("relative $L^\\infty$ error")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_error_vs_degree(rows, path):
    fig, ax = plt.subplots(figsize=(5.5, 4.2))
    ns = [int(r["n"]) for r in rows]
    es = [float(r["err_Linf"]) for r in rows]
    ax.semilogy(ns, es, "o-")
    ax.set_xlabel("polynomial degree n")
    ax.set_ylabel("$L^\\infty$ error at final time")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_history(times, max_norms, species, path):
    """Max-norm of every species against time."""
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    for k, name in enumerate(species):
        ax.plot(times, max_norms[:, k], label=name)
    ax.set_xlabel("t")
    ax.set_ylabel("max |u|")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_surface_field(node_coords, values, ref, path, title=""):
    """Flat-shaded rendering of a nodal field over the lifted elements."""
    node_coords = np.asarray(node_coords)
    values = np.asarray(values)
    sub = reference_subtriangulation(ref)
    tris = node_coords[:, sub].reshape(-1, 3, 3)
    cval = values[:, sub].mean(axis=-1).reshape(-1)
    lo, hi = float(cval.min()), float(cval.max())
    norm = plt.Normalize(lo, hi if hi > lo else lo + 1.0)
    colors = plt.cm.viridis(norm(cval))

    fig = plt.figure(figsize=(5.5, 5))
    ax = fig.add_subplot(projection="3d")
    ax.add_collection3d(Poly3DCollection(tris, facecolors=colors, edgecolors="none"))
    pts = node_coords.reshape(-1, 3)
    lo_b, hi_b = pts.min(axis=0), pts.max(axis=0)
    mid, rad = (lo_b + hi_b) / 2, (hi_b - lo_b).max() / 2
    for setter, m in zip((ax.set_xlim, ax.set_ylim, ax.set_zlim), mid):
        setter(m - rad, m + rad)
    ax.set_box_aspect((1, 1, 1))
    ax.set_axis_off()
    sm = plt.cm.ScalarMappable(norm=norm, cmap="viridis")
    fig.colorbar(sm, ax=ax, shrink=0.6)
    ax.set_title(title)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)
