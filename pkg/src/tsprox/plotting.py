"""Report figures. Uses the object-oriented Agg canvas, never the pyplot state machine."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

_STYLE = {"linewidth": 1.2}


def _new(width=5.0, height=3.4):
    fig = Figure(figsize=(width, height), layout="constrained")
    FigureCanvasAgg(fig)
    return fig, fig.add_subplot()


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    return path


def regret_vs_bound(groups: dict, path) -> Path:
    """Scatter of measured local regret against its bound, one colour per window.

    ``groups`` maps a label to a pair of equal-length sequences ``(measured, bound)``.
    """
    fig, ax = _new()
    lo, hi = np.inf, 0.0
    for label, (meas, bnd) in groups.items():
        meas, bnd = np.asarray(meas, float), np.asarray(bnd, float)
        ax.scatter(bnd, meas, s=14, label=str(label))
        pos = np.concatenate([meas[meas > 0], bnd[bnd > 0]])
        if pos.size:
            lo, hi = min(lo, pos.min()), max(hi, pos.max())
    if hi > 0:
        ax.plot([lo, hi], [lo, hi], "k--", label="measured = bound", **_STYLE)
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel("bound")
    ax.set_ylabel("measured local regret")
    ax.legend(fontsize=8)
    return _save(fig, path)


def inner_iterations(series: dict, path) -> Path:
    """Inner-loop length per round; ``series`` maps a label to the per-round counts."""
    fig, ax = _new()
    for label, tau in series.items():
        tau = np.asarray(tau)
        ax.plot(np.arange(1, tau.size + 1), tau, label=str(label), **_STYLE)
    ax.set_xlabel("round t")
    ax.set_ylabel("inner iterations")
    ax.legend(fontsize=8)
    return _save(fig, path)


def cumulative_regret(series: dict, path, per_round_bound: dict | None = None) -> Path:
    """Running sum of per-round residuals, optionally against a linear reference per label."""
    fig, ax = _new()
    for label, terms in series.items():
        terms = np.asarray(terms, float)
        t = np.arange(1, terms.size + 1)
        (line,) = ax.plot(t, np.cumsum(terms), label=str(label), **_STYLE)
        if per_round_bound and label in per_round_bound:
            ax.plot(t, per_round_bound[label] * t, ":", color=line.get_color(), **_STYLE)
    ax.set_xlabel("round t")
    ax.set_ylabel("cumulative local regret")
    ax.legend(fontsize=8)
    return _save(fig, path)


def equilibrium_residuals(residuals, epsilon: float, path, w: int | None = None) -> Path:
    """Largest per-player squared residual by round, with the target level."""
    res = np.asarray(residuals, float)
    fig, ax = _new()
    t = np.arange(1, res.shape[0] + 1)
    ax.semilogy(t, res.max(axis=1) if res.ndim == 2 else res, label="max over players", **_STYLE)
    ax.axhline(epsilon, color="k", linestyle="--", label="epsilon", **_STYLE)
    if w is not None:
        ax.axvline(w, color="0.5", linestyle=":", **_STYLE)
    ax.set_xlabel("round t")
    ax.set_ylabel("squared residual")
    ax.legend(fontsize=8)
    return _save(fig, path)


def stationarity_histogram(values, epsilon: float, path) -> Path:
    vals = np.asarray(values, float)
    fig, ax = _new()
    ax.hist(vals, bins=min(20, max(5, vals.size // 2)))
    ax.axvline(epsilon, color="k", linestyle="--", label="epsilon", **_STYLE)
    ax.axvline(vals.mean(), color="C1", label="mean", **_STYLE)
    ax.set_xlabel("squared residual at the sampled round")
    ax.set_ylabel("replications")
    ax.legend(fontsize=8)
    return _save(fig, path)
