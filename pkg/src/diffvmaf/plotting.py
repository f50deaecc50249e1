"""Report figures rendered to files (Agg backend, no display needed)."""

from __future__ import annotations

import math
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_sweeps(curves: dict[str, Sequence], path) -> None:
    """VMAF against PSNR for each named sweep, points labelled by alpha.

    ``curves`` maps a label to a list of rows with ``alpha``, ``vmaf``
    and ``psnr_db`` attributes.  Rows with infinite PSNR (alpha = 0) are
    drawn as a horizontal reference line.
    """
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for label, rows in curves.items():
        finite = [r for r in rows if math.isfinite(r.psnr_db)]
        x = [r.psnr_db for r in finite]
        y = [r.vmaf for r in finite]
        (line,) = ax.plot(x, y, marker="o", label=label)
        for r in finite:
            ax.annotate(f"{r.alpha:g}", (r.psnr_db, r.vmaf), textcoords="offset points",
                        xytext=(4, 4), fontsize=7, color=line.get_color())
        for r in rows:
            if not math.isfinite(r.psnr_db):
                ax.axhline(r.vmaf, color="gray", lw=0.8, ls="--")
    ax.invert_xaxis()
    ax.set_xlabel("PSNR (dB)")
    ax.set_ylabel("VMAF (unclipped)")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_training(records: Sequence, path, checkpoints: Sequence = ()) -> None:
    """Batch loss per step, with full-frame checkpoint scores overlaid."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([r.step for r in records], [r.batch_loss for r in records], lw=1, label="batch loss")
    if checkpoints:
        ax2 = ax.twinx()
        ax2.plot([c.step for c in checkpoints], [c.eval_vmaf for c in checkpoints],
                 "s-", color="C1", ms=3, label="eval VMAF")
        ax2.set_ylabel("mean eval VMAF")
    ax.set_xlabel("step")
    ax.set_ylabel("batch loss (sum of VMAF)")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_kernel(weights: np.ndarray, path) -> None:
    fig, ax = plt.subplots(figsize=(4, 3.5))
    lim = float(np.abs(weights).max())
    im = ax.imshow(weights, cmap="RdBu_r", vmin=-lim, vmax=lim)
    fig.colorbar(im, ax=ax)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_gradcheck(analytic: np.ndarray, numeric: np.ndarray, path) -> None:
    """Scatter of numeric against analytic gradient entries."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.scatter(a, n, s=14)
    lo, hi = min(a.min(), n.min()), max(a.max(), n.max())
    ax.plot([lo, hi], [lo, hi], color="gray", lw=0.8)
    ax.set_xlabel("analytic")
    ax.set_ylabel("numeric")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
