"""Static report figures.

Figures are built on ``matplotlib.figure.Figure`` directly (Agg canvas, no
pyplot state), and PNG metadata that would vary between runs is dropped.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import numpy as np
from matplotlib.figure import Figure

from .model import ACTION_OFFSETS, STILL

_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=110, metadata=_META)


def value_map(path, v, shape, policy=None, goals=(), title=""):
    """Heatmap of ``V`` per cell, with max-policy arrows when ``policy`` is given."""
    h, w = shape
    grid = np.asarray(v, dtype=float).reshape(h, w)
    fig = Figure(figsize=(1.0 + 0.42 * w, 0.6 + 0.42 * h))
    ax = fig.add_subplot()
    im = ax.imshow(grid, cmap="viridis", origin="upper")
    fig.colorbar(im, ax=ax, shrink=0.8, label="V")
    if policy is not None:
        best = np.argmax(policy.probs, axis=1).reshape(h, w)
        dr = np.array([ACTION_OFFSETS[a][0] for a in best.ravel()]).reshape(h, w)
        dc = np.array([ACTION_OFFSETS[a][1] for a in best.ravel()]).reshape(h, w)
        rows, cols = np.mgrid[0:h, 0:w]
        move = best != STILL
        ax.quiver(cols[move], rows[move], dc[move], -dr[move], color="white",
                  scale=1.6, scale_units="xy", width=0.004)
        ax.plot(cols[~move], rows[~move], "o", color="white", ms=3, ls="none")
    for s in sorted(goals):
        ax.plot(s % w, s // w, "*", color="red", ms=9)
    ax.set_xticks([])
    ax.set_yticks([])
    if title:
        ax.set_title(title)
    _save(fig, path)


def increments(path, series: dict):
    """Log-log sup-norm increments per rule."""
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot()
    for label, inc in series.items():
        inc = np.asarray(inc, dtype=float)
        k = np.arange(1, inc.size + 1)
        ok = inc > 0
        ax.loglog(k[ok], inc[ok], label=label, lw=1)
    ax.set_xlabel("iteration")
    ax.set_ylabel("max |V_k - V_(k-1)|")
    ax.legend(fontsize=7)
    ax.grid(True, which="both", lw=0.3)
    fig.tight_layout()
    _save(fig, path)


def point_policy(path, rows: dict, cell):
    """One 3x3 action panel per rule at a single cell."""
    n = len(rows)
    ncol = min(n, 3)
    nrow = -(-n // ncol)
    fig = Figure(figsize=(2.4 * ncol, 2.4 * nrow))
    for i, (label, p) in enumerate(rows.items()):
        ax = fig.add_subplot(nrow, ncol, i + 1)
        ax.imshow(np.asarray(p).reshape(3, 3), cmap="Greys", vmin=0, vmax=1)
        for a, q in enumerate(p):
            ax.text(a % 3, a // 3, f"{q:.2f}", ha="center", va="center",
                    color="tab:red", fontsize=7)
        ax.set_title(label, fontsize=8)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.suptitle(f"policy at cell {tuple(cell)}", fontsize=9)
    fig.tight_layout()
    _save(fig, path)


def sweep(path, param, values, entropy, iterations):
    fig = Figure(figsize=(6, 3.2))
    ax = fig.add_subplot(1, 2, 1)
    ax.plot(values, entropy, "o-")
    ax.set_xlabel(param)
    ax.set_ylabel("mean policy entropy")
    ax2 = fig.add_subplot(1, 2, 2)
    ax2.plot(values, iterations, "s-")
    ax2.set_xlabel(param)
    ax2.set_ylabel("iterations")
    fig.tight_layout()
    _save(fig, path)
