"""Figures for selection runs and method comparisons.

Figures are drawn on the Agg canvas directly so that importing this module
never changes the global matplotlib backend.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .design import BoundedDesign
from .select import SelectionTrace

__all__ = ["plot_trace", "plot_weights", "plot_comparison"]

_STYLE = {"lw": 1.2}


def _save(fig: Figure, path: str | Path) -> Path:
    path = Path(path)
    FigureCanvasAgg(fig)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    return path


def plot_trace(trace: SelectionTrace, path: str | Path) -> Path:
    """Criterion value and certificate gap against the outer iteration."""
    it = np.array([r.iteration for r in trace.records])
    ph = np.array([r.phi for r in trace.records])
    gap = np.array([r.certificate.gap for r in trace.records])
    eps = np.array([r.certificate.epsilon_used for r in trace.records])
    fig = Figure(figsize=(8, 3.2))
    ax1, ax2 = fig.subplots(1, 2)
    ax1.plot(it, ph - ph.min(), color="k", **_STYLE)
    ax1.set_yscale("symlog", linthresh=1e-12)
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("phi - min phi")
    pos = np.where(gap > 0, gap + eps, np.nan)
    ax2.plot(it, pos, color="C0", **_STYLE, label="violation + eps")
    ax2.plot(it, eps, color="C3", ls="--", **_STYLE, label="eps")
    if np.isfinite(pos).any():
        ax2.set_yscale("log")
    ax2.set_xlabel("iteration")
    ax2.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_weights(design: BoundedDesign, path: str | Path) -> Path:
    """Support weights in decreasing order against the upper bound ``1/n``."""
    w = np.sort(design.weights[design.support])[::-1]
    fig = Figure(figsize=(5, 3.2))
    ax = fig.subplots()
    ax.step(np.arange(1, w.size + 1), w * design.n, where="mid", color="k", **_STYLE)
    ax.axhline(1.0, color="C3", ls="--", lw=0.8)
    ax.set_xlabel("support point (sorted)")
    ax.set_ylabel("n * weight")
    ax.set_ylim(0, 1.05)
    return _save(fig, path)


def plot_comparison(result, path: str | Path) -> Path:
    """Mean efficiency per method with one standard deviation error bars."""
    from .evalx import METHOD_LABELS

    s = result.summaries
    x = np.arange(len(s))
    fig = Figure(figsize=(6, 3.4))
    ax = fig.subplots()
    ax.bar(x, [100 * m.mean_eff for m in s], yerr=[100 * m.std_eff for m in s],
           color="0.6", edgecolor="k", capsize=3)
    ax.set_xticks(x, [METHOD_LABELS[m.method] for m in s], rotation=30, ha="right")
    ax.set_ylabel("efficiency (%)")
    ax.set_ylim(0, 105)
    ax.set_title(f"{result.criterion}, n = {result.n}", fontsize=9)
    return _save(fig, path)
