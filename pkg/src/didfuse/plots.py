"""Figures written next to the CSV reports (loss curves, decompositions, run spread, strategies)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import METRIC_NAMES  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_loss_curves(epochs: list, path) -> Path:
    """One panel per loss component against epoch."""
    keys = ("total", "recon_ir", "recon_vis", "grad_term", "base_gap", "detail_gap")
    x = [row["epoch"] for row in epochs]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(2, 3, figsize=(9, 5), sharex=True)
        for ax, k in zip(axes.ravel(), keys):
            ax.plot(x, [row[k] for row in epochs], lw=1.2)
            ax.set_title(k)
        for ax in axes[-1]:
            ax.set_xlabel("epoch")
        return _save(fig, path)


def plot_decomposition(ir, vis, maps: dict, path) -> Path:
    """Sources followed by the first base/detail channel of each (``maps`` keys like ``"B_I"``)."""
    panels = [("infrared", ir), ("visible", vis)] + [(k, v) for k, v in maps.items()]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(panels), figsize=(2 * len(panels), 2.3))
        for ax, (title, img) in zip(np.atleast_1d(axes), panels):
            ax.imshow(img, cmap="gray")
            ax.set_title(title)
            ax.axis("off")
        return _save(fig, path)


def plot_repro(table: list, path) -> Path:
    """Per-run metric values with the across-run mean, one panel per metric."""
    runs = [row["run"] for row in table]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(METRIC_NAMES), figsize=(12, 2.4))
        for ax, k in zip(axes, METRIC_NAMES):
            vals = [row[k] for row in table]
            ax.plot(runs, vals, "o-", ms=3, lw=1)
            ax.axhline(float(np.mean(vals)), color="0.5", lw=0.8, ls="--")
            ax.set_title(k.upper())
            ax.set_xlabel("run")
        return _save(fig, path)


def plot_strategies(rows: list, path) -> Path:
    labels = [row["strategy"] for row in rows]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(METRIC_NAMES), figsize=(13, 2.8))
        for ax, k in zip(axes, METRIC_NAMES):
            ax.bar(range(len(rows)), [row[k] for row in rows], color="0.55")
            ax.set_xticks(range(len(rows)))
            ax.set_xticklabels(labels, rotation=60, ha="right")
            ax.set_title(k.upper())
        return _save(fig, path)


def plot_metric_table(reports: list, path) -> Path:
    ids = [r.fused_id for r in reports]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(METRIC_NAMES), figsize=(12, 2.4))
        for ax, k in zip(axes, METRIC_NAMES):
            ax.bar(range(len(ids)), [getattr(r, k) for r in reports], color="0.55")
            ax.set_title(k.upper())
            ax.set_xticks([])
        return _save(fig, path)
