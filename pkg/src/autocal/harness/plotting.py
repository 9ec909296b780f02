"""Post-hoc figures from run histories; written to files, never shown."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 120,
    "font.size": 9,
    "axes.grid": True,
    "grid.linestyle": "--",
    "grid.alpha": 0.5,
    "lines.linewidth": 1.4,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_cost(history, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3))
        c = history.costs
        ax.plot(history.index, c, color="C0")
        if np.all(c[np.isfinite(c)] > 0):
            ax.set_yscale("log")
        ax.set_xlabel("iteration" if history.mode == "episodic" else "step")
        ax.set_ylabel("cost")
        return _save(fig, path)


def plot_params(history, path, max_lines: int = 12) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3))
        th = history.thetas
        for j in range(min(th.shape[1], max_lines)):
            ax.plot(history.index, th[:, j], label=history.theta_names[j])
        if th.shape[1] <= max_lines:
            ax.legend(fontsize=7, ncol=2)
        ax.set_xlabel("iteration" if history.mode == "episodic" else "step")
        ax.set_ylabel("theta")
        return _save(fig, path)


def plot_trace(trace, path, Ts: float = 1.0, labels=None) -> Path:
    nx = trace.states.shape[-1]
    labels = labels or [f"x{i}" for i in range(nx)]
    t = np.arange(trace.N + 1) * Ts
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(nx + 1, 1, figsize=(6, 1.4 * (nx + 1)), sharex=True)
        for i in range(nx):
            axes[i].plot(t, trace.states[:, i], color="C0")
            axes[i].set_ylabel(labels[i])
        axes[0].plot(t, trace.refs[:, 0], color="C3", linestyle=":", label="ref")
        for j in range(trace.inputs.shape[-1]):
            axes[-1].step(t[:-1], trace.inputs[:, j], where="post", label=f"u{j}")
        axes[-1].set_ylabel("u")
        axes[-1].set_xlabel("time")
        axes[-1].legend(fontsize=7)
        return _save(fig, path)


def plot_sweep(curves, path, label: str = "") -> Path:
    """Median and interquartile band of cost curves, shape ``(seeds, iterations)``."""
    curves = np.asarray(curves, dtype=float)
    med = np.median(curves, axis=0)
    lo, hi = np.percentile(curves, [25, 75], axis=0)
    x = np.arange(curves.shape[1])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3))
        ax.fill_between(x, lo, hi, color="C0", alpha=0.25, linewidth=0)
        ax.plot(x, med, color="C0", label=label or "median")
        if np.all(curves > 0):
            ax.set_yscale("log")
        ax.set_xlabel("iteration")
        ax.set_ylabel("cost")
        ax.legend()
        return _save(fig, path)
