"""Figure rendering for training and evaluation artifacts.

Everything here writes PNG files next to the delimited data files produced
by the CLI; nothing is shown interactively.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import HEADERS  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    # keeps the PNG bytes stable across runs
    "svg.hashsalt": "maxent-retinex",
}

METRIC_KEYS = ("ge", "ce", "gmi", "gmg", "loe_low", "loe_high", "psnr", "ssim")


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_loss_curve(records, path, window: int = 20):
    """Mean epoch loss with a trailing moving average."""
    from .training import smoothed

    epochs = [r["epoch"] for r in records]
    loss = [r["loss"] for r in records]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        ax.plot(epochs, loss, lw=0.8, color="0.6", label="epoch mean")
        if len(loss) > 1:
            ax.plot(epochs, smoothed(loss, window), lw=1.4, color="C0",
                    label=f"{window}-epoch average")
        ax.set_xlabel("epoch")
        ax.set_ylabel("total loss")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_loss_components(records, path):
    keys = ("reconstruction", "reflectance", "illumination", "reflectance_tv")
    epochs = [r["epoch"] for r in records]
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, len(keys), figsize=(10, 2.4))
        for ax, key in zip(axes, keys):
            ax.plot(epochs, [r[key] for r in records], lw=1.0)
            ax.set_title(key)
            ax.set_xlabel("epoch")
        fig.tight_layout()
        return _save(fig, path)


def plot_metric_curves(records, path):
    """Test-set metrics against training epoch, one panel per metric."""
    rows = [r for r in records if r.get("metrics")]
    if not rows:
        return None
    keys = [k for k in METRIC_KEYS if rows[0]["metrics"].get(k) is not None]
    ncol = 4
    nrow = int(np.ceil(len(keys) / ncol))
    epochs = [r["epoch"] for r in rows]
    with plt.rc_context(RC):
        fig, axes = plt.subplots(nrow, ncol, figsize=(10, 2.3 * nrow), squeeze=False)
        for ax, key in zip(axes.flat, keys):
            ax.plot(epochs, [r["metrics"][key] for r in rows], marker="o", ms=3, lw=1.0)
            ax.set_title(HEADERS[key])
            ax.set_xlabel("epoch")
        for ax in list(axes.flat)[len(keys):]:
            ax.axis("off")
        fig.tight_layout()
        return _save(fig, path)


def plot_stability(reports, path):
    """One panel per metric, one point per independent run."""
    keys = [k for k in METRIC_KEYS if getattr(reports[0], k) is not None]
    runs = np.arange(1, len(reports) + 1)
    ncol = 4
    nrow = int(np.ceil(len(keys) / ncol))
    with plt.rc_context(RC):
        fig, axes = plt.subplots(nrow, ncol, figsize=(10, 2.3 * nrow), squeeze=False)
        for ax, key in zip(axes.flat, keys):
            ax.plot(runs, [getattr(r, key) for r in reports], marker="s", ms=4, lw=0.8)
            ax.set_title(HEADERS[key])
            ax.set_xlabel("run")
            ax.set_xticks(runs)
        for ax in list(axes.flat)[len(keys):]:
            ax.axis("off")
        fig.tight_layout()
        return _save(fig, path)


def plot_metric_bars(mean_report, path):
    keys = [k for k in METRIC_KEYS if getattr(mean_report, k) is not None]
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, len(keys), figsize=(1.3 * len(keys), 2.4))
        for ax, key in zip(np.atleast_1d(axes), keys):
            ax.bar([0], [getattr(mean_report, key)], color="C0", width=0.6)
            ax.set_title(HEADERS[key])
            ax.set_xticks([])
        fig.tight_layout()
        return _save(fig, path)
