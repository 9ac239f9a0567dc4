"""Figure rendering for the report subcommands (PNG files via the Agg backend)."""

from __future__ import annotations

from contextlib import contextmanager
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

RC = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}


@contextmanager
def _figure(path, ncols=1, width=4.0, height=3.0):
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, ncols, figsize=(width * ncols, height), squeeze=False)
        try:
            yield fig, axes[0]
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            fig.savefig(path)
        finally:
            plt.close(fig)


def plot_spectra(spectra: dict, path) -> Path:
    """Normalized singular values per weight matrix against the uniform level."""
    names = list(spectra)
    ncols = min(4, max(1, len(names)))
    nrows = -(-len(names) // ncols) if names else 1
    with plt.rc_context(RC):
        fig, axes = plt.subplots(nrows, ncols, figsize=(2.6 * ncols, 2.2 * nrows), squeeze=False)
        try:
            for ax in axes.flat[len(names):]:
                ax.set_visible(False)
            for ax, name in zip(axes.flat, names):
                _, s = spectra[name]
                ax.bar(np.arange(1, s.size + 1), s, color="#4c72b0", width=0.8)
                ax.axhline(1.0 / s.size, color="#c44e52", lw=1, ls="--")
                ax.set_title(name)
                ax.set_xlabel("index")
                ax.xaxis.set_major_locator(MaxNLocator(integer=True))
            axes[0, 0].set_ylabel("normalized singular value")
            fig.tight_layout()
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            fig.savefig(path)
        finally:
            plt.close(fig)
    return Path(path)


def plot_histograms(reports: dict, path, xlabel="parameter value") -> Path:
    """Overlay step histograms, one per labelled :class:`HistogramReport`."""
    with _figure(path, width=4.5) as (fig, axes):
        ax = axes[0]
        for label, rep in reports.items():
            widths = np.diff(rep.bin_edges)
            density = rep.counts / (rep.n * widths)
            ax.stairs(density, rep.bin_edges, label=f"{label} (var {rep.variance:.3g})")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("density")
        ax.legend()
    return Path(path)


def plot_training(epoch_rows: list, path) -> Path:
    epochs = [r["epoch"] for r in epoch_rows]
    with _figure(path, ncols=2) as (fig, axes):
        axes[0].plot(epochs, [r["task_loss"] for r in epoch_rows], label="task loss")
        axes[0].plot(epochs, [r["total_loss"] for r in epoch_rows], label="total")
        axes[0].set_xlabel("epoch")
        axes[0].legend()
        axes[1].plot(epochs, [r["mean_layer_kl"] for r in epoch_rows], color="#c44e52")
        axes[1].set_xlabel("epoch")
        axes[1].set_ylabel("mean layer KL")
        fig.tight_layout()
    return Path(path)
