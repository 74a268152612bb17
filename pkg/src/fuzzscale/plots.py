"""Figures for campaign reports. Always renders to files, never to a screen."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GOLDEN = (5**0.5 - 1) / 2


def _figure(width: float = 6.0, height: float | None = None):
    return plt.subplots(figsize=(width, height or width * GOLDEN), dpi=120)


def pairwise_heatmap(labels: Sequence[str], matrix: np.ndarray, path, title: str = ""):
    fig, ax = _figure(5.5, 4.5)
    lim = float(np.nanmax(np.abs(matrix[np.isfinite(matrix)]))) if np.isfinite(matrix).any() else 1.0
    im = ax.imshow(matrix, cmap="RdYlGn", vmin=-lim or -1, vmax=lim or 1)
    ax.set_xticks(range(len(labels)), labels, rotation=30, ha="right")
    ax.set_yticks(range(len(labels)), labels)
    for i in range(len(labels)):
        for j in range(len(labels)):
            if i != j:
                ax.text(j, i, f"{matrix[i, j]:+.1f}", ha="center", va="center", fontsize=8)
    fig.colorbar(im, ax=ax, label="% row vs column")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def totals_bar(totals: Mapping[str, float], path):
    fig, ax = _figure()
    names = list(totals)
    ax.bar(names, [totals[n] for n in names], color="0.4")
    ax.set_ylabel("total coverage (units)")
    ax.tick_params(axis="x", rotation=20)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def coverage_curves(timelines: Mapping[str, tuple[np.ndarray, np.ndarray]], path, slice_ms: float | None = None):
    """Total coverage against time, one line per campaign."""
    fig, ax = _figure()
    for label, (xs, ys) in timelines.items():
        x = xs * slice_ms / 1000.0 if slice_ms else xs
        ax.plot(x, ys, label=label, lw=1.2)
    ax.set_xlabel("time (s)" if slice_ms else "slice")
    ax.set_ylabel("total coverage (units)")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def allocation_histogram(slices: Mapping[str, Sequence[int]], path):
    """Distribution of fuzz time per program for each campaign."""
    fig, ax = _figure()
    for label, values in slices.items():
        ax.hist(list(values), bins=40, histtype="step", label=label)
    ax.set_xlabel("slices granted per program")
    ax.set_ylabel("programs")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)
