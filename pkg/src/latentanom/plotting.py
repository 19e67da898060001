"""Offline figures: score histograms, original-vs-patched overlays, embedding scatter.

Every figure is written next to a CSV holding the plotted numbers.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def _style(ax) -> None:
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    ax.tick_params(direction="out", labelsize=9)


def _save(fig, path: Path, metadata: Optional[dict] = None) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={k: str(v) for k, v in (metadata or {}).items()})
    plt.close(fig)
    return path


def score_histogram(groups: Mapping[str, np.ndarray], path: str | Path, log_scale: bool = True,
                    bins: int = 40, xlabel: str = "reconstruction MSE",
                    title: Optional[str] = None) -> tuple[Path, Path]:
    """Overlaid histograms of per-window scores on shared bins.

    Writes ``path`` (PNG, with the y-axis scale in its metadata) and a CSV of
    bin edges and per-group counts beside it.
    """
    path = Path(path)
    groups = {k: np.asarray(v, dtype=np.float64).reshape(-1) for k, v in groups.items()}
    pooled = np.concatenate([v for v in groups.values() if v.size])
    if pooled.size == 0:
        raise ValueError("no scores to plot")
    edges = np.histogram_bin_edges(pooled, bins=bins)
    counts = {k: np.histogram(v, bins=edges)[0] for k, v in groups.items()}

    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for color, (name, c) in zip(COLORS, counts.items()):
        ax.stairs(c, edges, fill=True, alpha=0.45, color=color, label=f"{name} (n={len(groups[name])})")
    yscale = "log" if log_scale else "linear"
    ax.set_yscale(yscale)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("windows")
    if title:
        ax.set_title(title, fontsize=10)
    ax.legend(frameon=False, fontsize=8)
    _style(ax)
    _save(fig, path, {"yscale": yscale, "bins": len(edges) - 1})

    csv_path = path.with_suffix(".csv")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", *counts])
        for i in range(len(edges) - 1):
            w.writerow([repr(float(edges[i])), repr(float(edges[i + 1])), *(int(c[i]) for c in counts.values())])
    return path, csv_path


def patch_overlay(original: np.ndarray, patched: np.ndarray, mask: np.ndarray, path: str | Path,
                  generated: Optional[np.ndarray] = None, dim: int = 0,
                  title: Optional[str] = None) -> tuple[Path, Path]:
    """One window: the original trace, the patched trace, and shaded patched cells."""
    path = Path(path)
    x = np.asarray(original)[:, dim]
    p = np.asarray(patched)[:, dim]
    m = np.asarray(mask)[:, dim].astype(bool)
    t = np.arange(len(x))

    fig, ax = plt.subplots(figsize=(6, 2.8))
    if generated is not None:
        ax.plot(t, np.asarray(generated)[:, dim], color="0.6", lw=0.8, ls="--", label="generated")
    ax.plot(t, x, color=COLORS[0], lw=1.2, label="original")
    ax.plot(t, p, color=COLORS[1], lw=1.0, label="patched")
    lo, hi = ax.get_ylim()
    ax.fill_between(t, lo, hi, where=m, step="mid", color=COLORS[1], alpha=0.12, lw=0)
    ax.set_ylim(lo, hi)
    ax.set_xlabel("t")
    ax.set_ylabel(f"dim {dim}")
    if title:
        ax.set_title(title, fontsize=10)
    ax.legend(frameon=False, fontsize=8, ncol=3)
    _style(ax)
    _save(fig, path, {"patched_cells": int(m.sum())})

    csv_path = path.with_suffix(".csv")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        cols = ["t", "original", "patched", "mask"] + (["generated"] if generated is not None else [])
        w.writerow(cols)
        for i in t:
            row = [int(i), repr(float(x[i])), repr(float(p[i])), int(m[i])]
            if generated is not None:
                row.append(repr(float(np.asarray(generated)[i, dim])))
            w.writerow(row)
    return path, csv_path


def embedding_scatter(points: Mapping[str, np.ndarray], path: str | Path,
                      title: Optional[str] = None) -> Path:
    """2-D scatter of already-projected embeddings, one color per group."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    for color, (name, P) in zip(COLORS, points.items()):
        P = np.asarray(P)
        ax.scatter(P[:, 0], P[:, 1], s=8, alpha=0.6, color=color, label=name, lw=0)
    ax.set_xlabel("component 1")
    ax.set_ylabel("component 2")
    if title:
        ax.set_title(title, fontsize=10)
    ax.legend(frameon=False, fontsize=8)
    _style(ax)
    return _save(fig, path)


def pca_2d(V: np.ndarray, basis_from: Optional[np.ndarray] = None) -> np.ndarray:
    """Project rows of ``V`` onto the top two principal axes of ``basis_from`` (default ``V``)."""
    B = np.asarray(V if basis_from is None else basis_from, dtype=np.float64)
    mean = B.mean(axis=0)
    _, _, vt = np.linalg.svd(B - mean, full_matrices=False)
    return (np.asarray(V, dtype=np.float64) - mean) @ vt[:2].T
