"""Figure rendering for training reports (loss/accuracy curves, confusion matrices)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 10,
    "axes.labelsize": 10,
    "axes.titlesize": 11,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.5,
    "lines.markersize": 4,
    # reproducible SVG output
    "svg.hashsalt": "protclass",
    "svg.fonttype": "none",
}

TRAIN_COLOR = "#1f77b4"
VAL_COLOR = "#d62728"


def figsize(width=7.0, ratio=None):
    ratio = ratio or (np.sqrt(5.0) - 1.0) / 2.0
    return (width, width * ratio)


def _save(fig, path):
    fig.savefig(path, metadata={"Date": None} if str(path).endswith(".svg") else None)
    plt.close(fig)


def plot_history(history, path) -> None:
    """Two panels: train/val loss and train/val accuracy against epoch."""
    epochs = [r.epoch for r in history]
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=figsize(9.0, 0.4))
        for ax, key, title in ((ax_loss, "loss", "Loss"), (ax_acc, "acc", "Accuracy")):
            ax.plot(epochs, [getattr(r, f"train_{key}") for r in history], "o-", color=TRAIN_COLOR, label="train")
            ax.plot(epochs, [getattr(r, f"val_{key}") for r in history], "s--", color=VAL_COLOR, label="validation")
            ax.set_xlabel("epoch")
            ax.set_title(title)
            if len(epochs) == 1:
                ax.set_xlim(epochs[0] - 1, epochs[0] + 1)
            ax.legend(frameon=False)
        ax_acc.set_ylim(0, 1.02)
        fig.tight_layout()
        _save(fig, path)


def plot_confusion(cm, path) -> None:
    """Counts and row-normalised percentages side by side."""
    counts = np.array([[cm.tn, cm.fp], [cm.fn, cm.tp]], dtype=float)
    rows = counts.sum(axis=1, keepdims=True)
    pct = np.divide(100 * counts, rows, out=np.zeros_like(counts), where=rows > 0)
    labels = ["fake", "real"]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=figsize(8.0, 0.45))
        for ax, mat, fmt, title in ((axes[0], counts, "{:.0f}", "Counts"), (axes[1], pct, "{:.1f}%", "Percent of true class")):
            ax.imshow(mat, cmap="Blues")
            for (i, j), v in np.ndenumerate(mat):
                ax.text(j, i, fmt.format(v), ha="center", va="center",
                        color="white" if mat.max() and v > 0.6 * mat.max() else "black")
            ax.set_xticks([0, 1], labels)
            ax.set_yticks([0, 1], labels)
            ax.set_xlabel("predicted")
            ax.set_ylabel("true")
            ax.set_title(title)
        fig.tight_layout()
        _save(fig, path)
