"""Static SVG figures. Output is byte-stable: fixed hash salt, no date stamp."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "egdl"


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_trajectories(times, infected, path, labels: Sequence[str] | None = None,
                      highlight: Sequence[int] = ()) -> Path:
    """Infected curves of all nodes; ``highlight`` nodes drawn on top."""
    infected = np.asarray(infected)
    fig, ax = plt.subplots(figsize=(7, 4))
    for x in range(infected.shape[1]):
        ax.plot(times, infected[:, x], color="0.7", lw=0.6)
    for x in highlight:
        name = labels[x] if labels is not None else str(x)
        ax.plot(times, infected[:, x], lw=1.5, label=name)
    if highlight:
        ax.legend(frameon=False)
    ax.set_xlabel("t")
    ax.set_ylabel("I")
    fig.tight_layout()
    return _save(fig, path)


def plot_forecast(history, actual, point, path, lower=None, upper=None, title: str = "") -> Path:
    """One location: history, held-out actuals, point forecast and band."""
    history = np.asarray(history, dtype=float)
    point = np.asarray(point, dtype=float)
    t_hist = np.arange(history.size)
    t_fut = np.arange(history.size, history.size + point.size)
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(t_hist, history, color="k", lw=1, label="observed")
    if actual is not None:
        ax.plot(t_fut, np.asarray(actual, dtype=float), color="k", lw=1, ls="--", label="actual")
    ax.plot(t_fut, point, color="C3", lw=1.5, label="forecast")
    if lower is not None and upper is not None:
        ax.fill_between(t_fut, lower, upper, color="C3", alpha=0.25, lw=0, label="band")
    ax.set_title(title)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_mcb(names, avg_rank, cd, best: int, path) -> Path:
    """Average rank with +/- CD/2 whiskers; the best model's interval shaded."""
    avg_rank = np.asarray(avg_rank, dtype=float)
    order = np.argsort(avg_rank, kind="stable")
    fig, ax = plt.subplots(figsize=(max(4, 0.8 * len(names)), 4))
    lo, hi = avg_rank[best] - cd / 2, avg_rank[best] + cd / 2
    ax.axhspan(lo, hi, color="0.85")
    xs = np.arange(len(names))
    ax.errorbar(xs, avg_rank[order], yerr=cd / 2, fmt="o", color="k", capsize=3)
    ax.set_xticks(xs)
    ax.set_xticklabels([f"{names[k]} - {avg_rank[k]:.2f}" for k in order], rotation=60,
                       ha="right", fontsize=8)
    ax.set_ylabel("average rank")
    fig.tight_layout()
    return _save(fig, path)
