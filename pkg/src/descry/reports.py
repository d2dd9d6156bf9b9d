"""Matplotlib figures rendered to files alongside the CSV outputs."""

from __future__ import annotations

from pathlib import Path
from typing import List, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .evaluation import ErrorSummary


def training_figure(log_rows: List[dict], path) -> None:
    """Train loss and validation PCK-AUC per epoch."""
    epochs = [r["epoch"] for r in log_rows]
    losses = [r["train_loss"] for r in log_rows]
    fig, ax1 = plt.subplots(figsize=(7, 4))
    ax1.plot(epochs, losses, "C0-", label="train loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss", color="C0")
    vals = [(r["epoch"], r["val_pck_auc"]) for r in log_rows if "val_pck_auc" in r]
    if vals:
        ax2 = ax1.twinx()
        ax2.plot(*zip(*vals), "C1-", label="val PCK-AUC")
        ax2.set_ylabel("val PCK-AUC", color="C1")
        ax2.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def error_figure(errors: np.ndarray, summary: ErrorSummary, path) -> None:
    """Error histogram plus the PCK@K curve for K = 1..100."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.hist(errors, bins=40, color="C0")
    ax1.axvline(summary.median, color="C1", label=f"median {summary.median:.2f}px")
    ax1.axvline(summary.q75, color="C2", label=f"q75 {summary.q75:.2f}px")
    ax1.set_xlabel("pixel error")
    ax1.set_ylabel("count")
    ax1.legend()
    ks = np.arange(1, 101)
    pck = [(errors < k).mean() for k in ks]
    ax2.plot(ks, pck, "C0-")
    ax2.set_xlabel("K (px)")
    ax2.set_ylabel("PCK@K")
    ax2.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def sweep_figure(curves: dict, path) -> None:
    """q75 error versus magnitude, one line per sweep kind."""
    fig, axes = plt.subplots(1, len(curves), figsize=(4.5 * len(curves), 4), squeeze=False)
    for ax, (kind, curve) in zip(axes[0], curves.items()):
        mags, q75s = zip(*curve)
        ax.plot(mags, q75s, "C0o-")
        ax.set_xlabel(kind)
        ax.set_ylabel("q75 pixel error")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
