"""Report figures written next to the CSV/JSON outputs."""

from __future__ import annotations

import math
import os
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 120,
    "savefig.dpi": 150,
    "font.size": 9,
    "axes.labelsize": 10,
    "axes.titlesize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 8,
    "legend.frameon": False,
}

GROUP_COLORS = {"A": "#4C72B0", "B": "#D55E00", "C": "#55A868", "D": "#8172B2"}


def new_figure(width: float = 4.5, height: float | None = None):
    if height is None:
        height = width * (math.sqrt(5) - 1.0) / 2.0
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(width, height))
    return fig, ax


def save(fig, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(STYLE):
        fig.tight_layout()
        fig.savefig(path)
    plt.close(fig)
    return path


def scatter_with_fit(
    x: Sequence[float],
    y: Sequence[float],
    path: str | os.PathLike,
    xlabel: str,
    ylabel: str,
    pearson: float | None = None,
    spearman: float | None = None,
) -> Path:
    """Scatter plot with a least-squares line, coefficients in the legend."""
    fig, ax = new_figure()
    xs = np.asarray(x, dtype=float)
    ys = np.asarray(y, dtype=float)
    ax.scatter(xs, ys, s=18, color="#4C72B0", zorder=3)
    if xs.size >= 2 and np.ptp(xs) > 0:
        slope, icept = np.polyfit(xs, ys, 1)
        grid = np.linspace(xs.min(), xs.max(), 50)
        label = "linear fit"
        if pearson is not None:
            label += f" (r={pearson:.2f}"
            label += f", rho={spearman:.2f})" if spearman is not None else ")"
        ax.plot(grid, slope * grid + icept, color="#C44E52", lw=1.2, label=label)
        ax.legend(loc="upper left")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    return save(fig, path)


def ablation_strip(rows: Sequence[tuple[str, str, float]], path: str | os.PathLike) -> Path:
    """Per-query mean cross score in group order, dashed separators between groups."""
    fig, ax = new_figure(width=6.0)
    groups = [g for g, _, _ in rows]
    scores = [s for _, _, s in rows]
    idx = np.arange(len(rows))
    ax.scatter(idx, scores, c=[GROUP_COLORS.get(g, "k") for g in groups], s=22, zorder=3)
    for i in range(1, len(rows)):
        if groups[i] != groups[i - 1]:
            ax.axvline(i - 0.5, ls="--", lw=0.8, color="0.5")
    start = 0
    for i in range(1, len(rows) + 1):
        if i == len(rows) or groups[i] != groups[start]:
            ax.text((start + i - 1) / 2, max(scores, default=1) * 1.05, groups[start], ha="center")
            start = i
    ax.set_xticks(idx)
    ax.set_xticklabels([q for _, q, _ in rows], rotation=90, fontsize=6)
    ax.set_ylabel("mean cross score (top-5)")
    ax.set_ylim(0, max(scores, default=1) * 1.15)
    return save(fig, path)


def throughput(
    counts: Sequence[int],
    seconds: dict[str, Sequence[float]],
    path: str | os.PathLike,
) -> Path:
    """Wall time against opportunity count, one line per worker setting."""
    fig, ax = new_figure()
    for label, secs in seconds.items():
        ax.plot(counts, secs, marker="o", ms=3, label=label)
    ax.set_xlabel("opportunities")
    ax.set_ylabel("wall time (s)")
    ax.legend()
    return save(fig, path)
