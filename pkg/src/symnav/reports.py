"""Figure rendering for the report paths: every command that writes CSVs also
drops a PNG next to them."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_training_figure(path, curve) -> None:
    """Coverage and loss diagnostics against the update index."""
    updates = [row[0] for row in curve]
    fig, axes = plt.subplots(2, 2, figsize=(9, 6), sharex=True)
    panels = [("mean coverage (m$^2$)", [row[1] for row in curve]),
              ("policy loss", [row[2] for row in curve]),
              ("value loss", [row[3] for row in curve]),
              ("entropy", [row[4] for row in curve])]
    for ax, (label, series) in zip(axes.ravel(), panels):
        ax.plot(updates, series, lw=1.2)
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
    for ax in axes[1]:
        ax.set_xlabel("update")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_coverage_figure(path, records, label: str) -> None:
    """Per-run coverage curves with the across-run mean highlighted."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    curves = []
    for rec in records:
        steps = [row[0] for row in rec.steps]
        cov = [row[4] for row in rec.steps]
        ax.plot(steps, cov, color="steelblue", alpha=0.35, lw=0.9)
        curves.append((steps, cov))
    if curves:
        grid = np.linspace(0, max(s[-1] for s, _ in curves), 100)
        stack = [np.interp(grid, s, c) for s, c in curves]
        ax.plot(grid, np.mean(stack, axis=0), color="crimson", lw=2.0, label="mean")
        ax.legend(loc="lower right")
    ax.set_xlabel("step")
    ax.set_ylabel("coverage (m$^2$)")
    ax.set_title(label)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_similarity_figure(path, matrix: np.ndarray, label: str) -> None:
    """Heatmap of the rotation-similarity matrix."""
    fig, ax = plt.subplots(figsize=(5.2, 4.4))
    im = ax.imshow(matrix, vmin=-1.0, vmax=1.0, cmap="viridis")
    ax.set_xlabel("rotation index")
    ax.set_ylabel("rotation index")
    ax.set_title(label)
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_map_preview(path, grids, title: str) -> None:
    """Thumbnail grid of generated occupancy maps."""
    n = len(grids)
    cols = min(5, n)
    rows = -(-n // cols)
    fig, axes = plt.subplots(rows, cols, figsize=(2.2 * cols, 2.2 * rows))
    axes = np.atleast_1d(axes).ravel()
    for ax in axes:
        ax.axis("off")
    for ax, grid in zip(axes, grids):
        ax.imshow(grid.cells, cmap="gray_r", interpolation="nearest")
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
