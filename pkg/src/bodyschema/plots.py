"""Report figures rendered from trajectory logs (matplotlib, file output)."""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .estimator import TrajectoryLog

JOINT_NAMES = ("shoulder_1", "shoulder_2", "elbow")


def render_trace(log: TrajectoryLog, path: str | Path, title: str = "") -> None:
    """Per-joint estimate traces with dashed ground truth."""
    m = log.m
    fig, axes = plt.subplots(m, 1, figsize=(7, 2.2 * m), sharex=True)
    axes = np.atleast_1d(axes)
    for j, ax in enumerate(axes):
        ax.plot(log.t, log.x_hat[:, j], label="estimate", lw=1.2)
        if not np.all(np.isnan(log.truth[:, j])):
            ax.plot(log.t, log.truth[:, j], "k--", label="truth", lw=1.0)
        name = JOINT_NAMES[j] if j < len(JOINT_NAMES) else f"joint {j + 1}"
        ax.set_ylabel(f"{name} [rad]")
        ax.grid(alpha=0.3)
    axes[0].legend(loc="upper right", fontsize=8)
    axes[-1].set_xlabel("t [s]")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_error_compare(logs: dict[str, TrajectoryLog], path: str | Path) -> None:
    """Estimation-error norm over time, one labeled curve per run."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, log in sorted(logs.items()):
        valid = ~np.isnan(log.truth).all(axis=1)
        if not valid.any():
            continue
        err = np.linalg.norm(log.x_hat[valid] - log.truth[valid], axis=1)
        ax.plot(log.t[valid], err, label=label, lw=1.2)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("estimation error [rad]")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
