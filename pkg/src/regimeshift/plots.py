"""Deterministic SVG figures: trajectory, window scores, parameter paths."""
from __future__ import annotations

from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["plot_trajectory", "plot_scores", "plot_parameters", "emit_plots"]

_RC = {"svg.hashsalt": "regimeshift", "svg.fonttype": "path", "font.size": 9}


def _save(fig, path) -> Path:
    path = Path(path)
    with plt.rc_context(_RC):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def _shade(ax, intervals, label="candidate") -> None:
    for i, (a, b) in enumerate(intervals):
        ax.axvspan(a, b, color="tab:orange", alpha=0.25, lw=0, label=label if i == 0 else None)


def plot_trajectory(times, states, state_names, path, breakpoints=(), tau_hat=()):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(7, 3))
        states = np.atleast_2d(np.asarray(states).T).T
        for j, name in enumerate(state_names):
            ax.plot(times, states[:, j], lw=1, label=name)
        for i, b in enumerate(breakpoints):
            ax.axvline(b, color="k", ls=":", lw=1, label="true change" if i == 0 else None)
        for i, t in enumerate(tau_hat):
            ax.axvline(t, color="tab:red", ls="--", lw=1, label="estimated change" if i == 0 else None)
        ax.set_xlabel("t")
        ax.set_ylabel("state")
        ax.legend(loc="best", fontsize=7)
        fig.tight_layout()
    return _save(fig, path)


def plot_scores(centers, scores, path, intervals=(), log: bool = True):
    """Per-window terminal residual energy with candidate intervals shaded."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(7, 3))
        width = float(np.min(np.diff(centers))) * 0.8 if len(centers) > 1 else 0.8
        ax.bar(centers, scores, width=width, color="tab:blue")
        _shade(ax, intervals)
        if log and np.all(np.asarray(scores) > 0):
            ax.set_yscale("log")
        ax.set_xlabel("window centre")
        ax.set_ylabel("terminal residual energy")
        if len(intervals):
            ax.legend(loc="best", fontsize=7)
        fig.tight_layout()
    return _save(fig, path)


def _steps(t0, T, breakpoints, regimes, j):
    edges = [t0, *breakpoints, T]
    xs, ys = [], []
    for a, b, r in zip(edges[:-1], edges[1:], regimes):
        xs += [a, b]
        ys += [r[j], r[j]]
    return xs, ys


def plot_parameters(centers, theta_hat, param_names, path, horizon, estimate=None, truth=None):
    """Windowed θ̂_k with the refined and true piecewise-constant paths."""
    d = len(param_names)
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(d, 1, figsize=(7, 2.2 * d), sharex=True, squeeze=False)
        th = np.asarray(theta_hat).reshape(len(centers), d)
        for j, ax in enumerate(axes[:, 0]):
            ax.plot(centers, th[:, j], "o", ms=2.5, color="tab:blue", label="window estimate")
            if truth is not None:
                ax.plot(*_steps(*horizon, truth[0], truth[1], j), color="k", lw=1, ls=":", label="truth")
            if estimate is not None:
                ax.plot(*_steps(*horizon, estimate[0], estimate[1], j), color="tab:red", lw=1.2,
                        label="refined")
                for t in estimate[0]:
                    ax.axvline(t, color="tab:red", lw=0.6, ls="--")
            ax.set_ylabel(param_names[j])
        axes[0, 0].legend(loc="best", fontsize=7)
        axes[-1, 0].set_xlabel("t")
        fig.tight_layout()
    return _save(fig, path)


def emit_plots(report: dict, outdir, dataset=None) -> list[Path]:
    """Write the three figures for a pipeline report dictionary."""
    from .dynamics import get_system

    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    system = get_system(report["system"])
    screen = report["screen"]
    centers = np.array([0.5 * (a + b) for a, b in screen["plan"]["windows"]])
    intervals = [tuple(c["interval"]) for c in screen["clusters"]]
    est = report.get("estimate")
    truth = report.get("truth")
    horizon = tuple(report["horizon"])
    paths = []
    if dataset is not None:
        paths.append(plot_trajectory(dataset.obs_times, dataset.obs_states, system.state_names,
                                     out / "trajectory.svg",
                                     truth["breakpoints"] if truth else (),
                                     est["change_points"] if est else ()))
    paths.append(plot_scores(centers, screen["S"], out / "scores.svg", intervals))
    paths.append(plot_parameters(
        centers, screen["theta_hat"], system.param_names, out / "parameters.svg", horizon,
        (est["change_points"], est["regimes"]) if est else None,
        (truth["breakpoints"], truth["regimes"]) if truth else None))
    return paths
