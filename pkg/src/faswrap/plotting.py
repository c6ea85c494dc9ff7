"""Plot rendering for run directories: ROC overlays, loss curves, and
spoof-mask comparison grids. Plots are derived artifacts only."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch

from . import samples as samples_io
from .samples import ImageCache


def plot_roc(run_dirs, out_path):
    """Overlay ROC curves from run dirs containing roc.csv; returns axis
    ranges for verification."""
    fig, ax = plt.subplots(figsize=(5, 5))
    plotted = []
    for run in run_dirs:
        roc_file = Path(run) / "roc.csv"
        if not roc_file.exists():
            continue
        data = np.genfromtxt(roc_file, delimiter=",", names=True)
        ax.plot(np.atleast_1d(data["fpr"]), np.atleast_1d(data["tpr"]), label=Path(run).name)
        plotted.append(str(run))
    if not plotted:
        plt.close(fig)
        return None
    ax.plot([0, 1], [0, 1], linestyle=":", color="gray", linewidth=0.8)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=7)
    fig.savefig(out_path, dpi=120, bbox_inches="tight")
    ranges = {"xlim": ax.get_xlim(), "ylim": ax.get_ylim(), "runs": plotted}
    plt.close(fig)
    return ranges


def plot_losses(run_dirs, out_path):
    fig, ax = plt.subplots(figsize=(6, 4))
    plotted = False
    y_min, y_max = np.inf, -np.inf
    for run in run_dirs:
        loss_file = Path(run) / "loss.csv"
        if not loss_file.exists():
            continue
        with open(loss_file, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            continue
        keys = [k for k in rows[0] if k != "epoch" and rows[0][k] != ""]
        epochs = [int(float(r["epoch"])) for r in rows]
        for key in keys:
            vals = [float(r[key]) for r in rows if r.get(key, "") != ""]
            if not vals:
                continue
            ax.plot(epochs[: len(vals)], vals, label=f"{Path(run).name}:{key}", linewidth=1)
            y_min = min(y_min, min(vals))
            y_max = max(y_max, max(vals))
            plotted = True
    if not plotted:
        plt.close(fig)
        return None
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(fontsize=6)
    pad = 0.05 * max(y_max - y_min, 1e-9)
    ax.set_ylim(y_min - pad, y_max + pad)
    fig.savefig(out_path, dpi=120, bbox_inches="tight")
    ranges = {"xlim": ax.get_xlim(), "ylim": ax.get_ylim()}
    plt.close(fig)
    return ranges


def save_mask_grid(out_path, models, sre, manifest, n_samples=4, cache=None):
    """Rows of (input image, estimated mask per model) panels.

    Used for side-by-side comparison of the spoof regions seen by the source,
    target, and updated extractors through one shared estimator."""
    cache = cache if cache is not None else ImageCache()
    spoof = manifest.spoof_samples()[:n_samples]
    if not spoof or sre is None:
        return None
    cols = 1 + len(models)
    fig, axes = plt.subplots(len(spoof), cols, figsize=(2 * cols, 2 * len(spoof)))
    axes = np.atleast_2d(axes)
    for row, sample in enumerate(spoof):
        image = cache.get(manifest, sample)
        axes[row, 0].imshow(image.transpose(1, 2, 0))
        axes[row, 0].set_title("input" if row == 0 else "", fontsize=8)
        with torch.no_grad():
            for col, model in enumerate(models, start=1):
                mask = sre(model.extract(torch.from_numpy(image[None])))[0].numpy()
                axes[row, col].imshow(mask, vmin=0, vmax=1, cmap="magma")
                if row == 0:
                    axes[row, col].set_title(model.role_tag, fontsize=8)
    for ax in axes.ravel():
        ax.axis("off")
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=110, bbox_inches="tight")
    plt.close(fig)
    return out_path


def plot_report(run_dirs, out_dir):
    """Render everything available from the given runs; returns
    (written paths, skipped descriptions)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written, skipped = [], []

    roc_ranges = plot_roc(run_dirs, out_dir / "roc.png")
    if roc_ranges is None:
        skipped.append("roc.png (no roc.csv in any run)")
    else:
        written.append(out_dir / "roc.png")

    loss_ranges = plot_losses(run_dirs, out_dir / "losses.png")
    if loss_ranges is None:
        skipped.append("losses.png (no loss.csv in any run)")
    else:
        written.append(out_dir / "losses.png")

    mask_found = False
    for run in run_dirs:
        mask_file = Path(run) / "masks.png"
        if mask_file.exists():
            mask_found = True
    if not mask_found:
        skipped.append("mask grid (no masks.png; runs without an estimator)")

    with open(out_dir / "plot_ranges.json", "w", encoding="utf-8") as fh:
        json.dump({"roc": roc_ranges, "losses": loss_ranges}, fh, indent=2, default=str)
    return written, skipped
