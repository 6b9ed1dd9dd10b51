"""Matplotlib figures written next to the CSV/JSON reports."""

from __future__ import annotations

import os
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PNG_META = {"Software": None}


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=PNG_META)
    plt.close(fig)


def plot_sweep(points, path: str | os.PathLike) -> None:
    """Recovery and misplaced rate against the fraction of voxels removed."""
    pts = sorted(points, key=lambda p: p.missing_fraction)
    miss = [100 * p.missing_fraction for p in pts]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(miss, [100 * p.recovery for p in pts], "o-", label="recovered removed voxels")
    ax.plot(miss, [100 * p.misplaced_rate for p in pts], "s--", label="misplaced voxels (of grid)")
    for p, m in zip(pts, miss):
        ax.annotate(str(p.size), (m, 100 * p.recovery), textcoords="offset points",
                    xytext=(0, 5), fontsize=7, ha="center")
    ax.axvline(40, color="grey", lw=0.8, ls=":")
    ax.set_xlabel("missing voxels (%)")
    ax.set_ylabel("%")
    ax.set_ylim(-2, 102)
    ax.legend(frameon=False, fontsize=8)
    _save(fig, path)


def plot_class_losses(report, path: str | os.PathLike) -> None:
    rows = report.classes
    x = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(max(4, 0.7 * len(rows) + 2), 3.5))
    ax.bar(x - 0.2, [r.input_loss for r in rows], 0.4, label="input loss")
    ax.bar(x + 0.2, [r.output_loss for r in rows], 0.4, label="output loss")
    ax.set_xticks(x)
    ax.set_xticklabels([r.name for r in rows], rotation=45, ha="right")
    ax.set_ylabel("L1 loss")
    ax.legend(frameon=False, fontsize=8)
    _save(fig, path)


def plot_history(history, path: str | os.PathLike) -> None:
    epochs = [h.epoch for h in history]
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
    axes[0].plot(epochs, [h.critic_loss for h in history], label="critic")
    axes[0].plot(epochs, [h.generator_loss for h in history], label="generator")
    axes[0].set_xlabel("epoch")
    axes[0].legend(frameon=False, fontsize=8)
    axes[1].plot(epochs, [h.completion_loss for h in history], color="C2")
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("completion loss")
    _save(fig, path)


def plot_trajectories(traces: dict[str, Sequence[tuple[int, float]]], path: str | os.PathLike) -> None:
    """Completion loss per generator step, one line per run."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for name, trace in traces.items():
        steps = [s for s, _ in trace]
        vals = [v for _, v in trace]
        ax.plot(steps, vals, label=name)
    ax.set_yscale("log")
    ax.set_xlabel("generator step")
    ax.set_ylabel("completion loss")
    ax.legend(frameon=False, fontsize=8)
    _save(fig, path)


def plot_voxels(grids, path: str | os.PathLike, titles: Sequence[str] | None = None) -> None:
    """Side-by-side 3D renders, e.g. complete / fractured / reconstructed."""
    fig = plt.figure(figsize=(3 * len(grids), 3))
    for i, g in enumerate(grids):
        ax = fig.add_subplot(1, len(grids), i + 1, projection="3d")
        ax.voxels(g.occupancy, facecolors="#c9a27e", edgecolor="#5a4632", linewidth=0.2)
        ax.set_axis_off()
        if titles:
            ax.set_title(titles[i], fontsize=9)
    _save(fig, path)
