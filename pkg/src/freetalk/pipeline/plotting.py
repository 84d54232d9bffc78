"""Report figures written next to the CSV outputs."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_training_log(rows: list[dict], path, title: str = "") -> Path:
    """Train (and validation, when present) loss per epoch on a log scale."""
    path = Path(path)
    epochs = [r["epoch"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.5), dpi=100)
    ax.plot(epochs, [r["train_loss"] for r in rows], label="train")
    if any(r.get("train_pos") not in (None, "") for r in rows):
        ax.plot(epochs, [r["train_pos"] for r in rows], label="train (position)", lw=0.8)
    val = [(r["epoch"], r["val_loss"]) for r in rows if r.get("val_loss") not in (None, "")]
    if val:
        ax.plot(*zip(*val), label="validation", marker=".", lw=1)
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_metrics(reports: dict[str, dict], path) -> Path:
    """One panel per metric with a bar per sequence."""
    path = Path(path)
    names = list(next(iter(reports.values())).keys()) if reports else []
    seqs = list(reports)
    cols = min(4, max(1, len(names)))
    rows = int(np.ceil(len(names) / cols)) or 1
    fig, axes = plt.subplots(rows, cols, figsize=(3.2 * cols, 2.6 * rows), dpi=100, squeeze=False)
    for ax, name in zip(axes.flat, names):
        vals = [reports[s][name] for s in seqs]
        ax.bar(range(len(seqs)), vals, color="tab:blue")
        ax.axhline(float(np.mean(vals)), color="k", lw=0.8, ls="--")
        ax.set_title(name, fontsize=9)
        ax.set_xticks(range(len(seqs)))
        ax.set_xticklabels(seqs, rotation=60, fontsize=6, ha="right")
    for ax in list(axes.flat)[len(names):]:
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
