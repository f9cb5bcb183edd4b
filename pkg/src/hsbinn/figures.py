"""Figure rendering for the CLI report paths. Files only (Agg backend);
the CSV/JSON outputs stay the machine-readable interface."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .capmodel import STATE_NAMES
from .solver import Trajectory


def _smooth(x: np.ndarray, window: int) -> np.ndarray:
    if x.size <= window:
        return x
    return np.convolve(x, np.ones(window) / window, mode="valid")


def render_loss_curves(history: list[dict], path, smooth_window: int = 500,
                       plateau_end: int | None = None,
                       decay_end: int | None = None) -> None:
    """Log-scale convergence plot of the loss components, smoothed with
    a moving average; dashed lines mark the LR schedule breakpoints."""
    total = np.array([h["loss_total"] for h in history])
    data = np.array([h["loss_data"] for h in history])
    ic = np.array([h["loss_ic"] for h in history])
    ode = np.array([sum(h["loss_ode_weighted"]) for h in history])
    window = max(1, min(smooth_window, len(history) // 10 or 1))

    fig, ax = plt.subplots(figsize=(9, 5))
    for series, label in ((total, "total"), (data, "data"), (ic, "initial condition"),
                          (ode, "ODE residual")):
        y = _smooth(series, window)
        x = np.arange(y.size) + (len(series) - y.size) // 2
        positive = y > 0
        ax.plot(x[positive], y[positive], label=label, lw=1.2)
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel(f"loss (moving average, window {window})")
    for mark in (plateau_end, decay_end):
        if mark is not None and 0 < mark < len(history):
            ax.axvline(mark, color="grey", ls="--", lw=0.8)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_voltage_overlays(entries, path, max_panels: int = 8) -> None:
    """Grid of per-config voltage overlays: solver vs surrogate.

    entries: iterable of (t, v_solver, v_surrogate, label).
    """
    entries = list(entries)[:max_panels]
    n = len(entries)
    ncols = min(4, n)
    nrows = (n + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(3.6 * ncols, 2.7 * nrows),
                             squeeze=False, sharex=True)
    for ax, (t, v_ref, v_pred, label) in zip(axes.ravel(), entries):
        ax.plot(t, v_ref, lw=1.4, label="solver")
        ax.plot(t, v_pred, lw=1.0, ls="--", label="surrogate")
        ax.set_title(label, fontsize=9)
        ax.set_xlabel("t (ms)")
        ax.set_ylabel("V (mV)")
    for ax in axes.ravel()[n:]:
        ax.set_axis_off()
    axes.ravel()[0].legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_apd_scatter(report, path) -> None:
    """Solver vs surrogate APD90 per config, with the identity line."""
    xs = [r.apd90_solver for r in report.rows if r.apd_valid]
    ys = [r.apd90_surrogate for r in report.rows if r.apd_valid]
    fig, ax = plt.subplots(figsize=(5, 5))
    if xs:
        lo = min(min(xs), min(ys))
        hi = max(max(xs), max(ys))
        pad = 0.05 * (hi - lo if hi > lo else 1.0)
        ax.plot([lo - pad, hi + pad], [lo - pad, hi + pad], color="grey", lw=0.8)
        ax.scatter(xs, ys, s=18)
    ax.set_xlabel("solver APD90 (ms)")
    ax.set_ylabel("surrogate APD90 (ms)")
    n_bad = report.n_apd_excluded
    ax.set_title(f"APD90 agreement ({len(xs)} configs, {n_bad} excluded)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_trajectory(traj: Trajectory, path) -> None:
    """All 14 state curves of one trajectory on a panel grid."""
    fig, axes = plt.subplots(4, 4, figsize=(13, 9), sharex=True)
    for k, name in enumerate(STATE_NAMES):
        ax = axes.ravel()[k]
        ax.plot(traj.t, traj.states[:, k], lw=1.0)
        ax.set_title(name, fontsize=9)
    for ax in axes.ravel()[len(STATE_NAMES):]:
        ax.set_axis_off()
    for ax in axes[-1]:
        ax.set_xlabel("t (ms)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
