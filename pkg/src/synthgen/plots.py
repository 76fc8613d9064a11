"""Figures written next to the CSV/JSON outputs (headless Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from synthgen import stats
from synthgen.dataset import Binary, Dataset

# fixed metadata keeps PNG bytes reproducible
PNG_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=100, metadata=PNG_META)
    plt.close(fig)


def plot_marginals(original: Dataset, synthetic: dict, path, columns=None, ncols: int = 4) -> None:
    """One panel per column: KDE curves for continuous columns, bar pairs for binaries.

    ``synthetic`` maps a legend label to a dataset with the same columns.
    """
    columns = list(columns) if columns is not None else original.names
    nrows = max(1, -(-len(columns) // ncols))
    fig, axes = plt.subplots(nrows, ncols, figsize=(3.2 * ncols, 2.4 * nrows), squeeze=False)
    series = [("original", original)] + list(synthetic.items())
    for ax, name in zip(axes.ravel(), columns):
        if original.kind(name) == Binary:
            width = 0.8 / len(series)
            for k, (label, data) in enumerate(series):
                freq = data.column(name).mean() if data.n else 0.0
                ax.bar(np.array([0, 1]) + k * width, [1 - freq, freq], width, label=label)
            ax.set_xticks([0.4, 1.4], ["0", "1"])
        else:
            lo = min(d.column(name).min() for _, d in series if d.n)
            hi = max(d.column(name).max() for _, d in series if d.n)
            grid = np.linspace(lo, hi, stats.GRID_POINTS)
            for label, data in series:
                x = data.column(name)
                if len(x) > 1 and np.ptp(x) > 0:
                    ax.plot(grid, stats.kde_curve(x, grid=grid)[1], label=label, lw=1.2)
        ax.set_title(name, fontsize=9)
        ax.tick_params(labelsize=7)
    for ax in axes.ravel()[len(columns):]:
        ax.axis("off")
    axes.ravel()[0].legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)


def plot_latent(grid, weights, latent, group_labels, path) -> None:
    """Cell mean propensity and normalized weights with the embedded points on top."""
    panels = [("mean propensity", grid.cell_mean)]
    if weights is not None:
        panels.append(("normalized weight", np.where(weights.normalized > 0, weights.normalized, np.nan)))
    fig, axes = plt.subplots(1, len(panels), figsize=(5 * len(panels), 4.2), squeeze=False)
    extent = [grid.origin[0], grid.edges(0)[-1], grid.origin[1], grid.edges(1)[-1]]
    latent = np.asarray(latent) if latent is not None else None
    for ax, (title, values) in zip(axes[0], panels):
        im = ax.imshow(values.T, origin="lower", extent=extent, aspect="auto", cmap="viridis")
        fig.colorbar(im, ax=ax, shrink=0.8)
        if latent is not None:
            labels = np.zeros(len(latent)) if group_labels is None else np.asarray(group_labels)
            for g, color in ((0, "white"), (1, "red")):
                sel = labels == g
                ax.scatter(latent[sel, 0], latent[sel, 1], s=2, c=color, alpha=0.5, label=f"group {g}")
        ax.set_title(title)
        ax.set_xlabel("z1")
        ax.set_ylabel("z2")
    if latent is not None:
        axes[0][0].legend(fontsize=7, loc="upper right")
    fig.tight_layout()
    _save(fig, path)


def plot_training_curve(curve, path) -> None:
    epochs = np.arange(1, len(curve) + 1)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for attr in ("total", "reconstruction_continuous", "reconstruction_binary", "kl"):
        ax.plot(epochs, [getattr(b, attr) for b in curve], label=attr, lw=1)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss per row")
    ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)
