"""Report figures written next to the CSV outputs (non-interactive Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "image.cmap": "viridis",
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_disparity(path, dmap, gt=None):
    """Disparity, strength and (with ground truth) error maps side by side."""
    with plt.rc_context(STYLE):
        panels = 3 if gt is not None else 2
        fig, axes = plt.subplots(1, panels, figsize=(3.6 * panels, 3.2))
        for ax, data, title in zip(axes, (dmap.disparity, dmap.strength),
                                   ("disparity [px]", "strength")):
            im = ax.imshow(data, interpolation="nearest")
            ax.set_title(title)
            ax.grid(False)
            fig.colorbar(im, ax=ax, shrink=0.8)
        if gt is not None:
            err = np.where(gt.valid & dmap.valid, dmap.disparity - gt.disparity, np.nan)
            lim = max(float(np.nanmax(np.abs(err))) if np.isfinite(err).any() else 0.0, 1e-3)
            im = axes[2].imshow(err, cmap="RdBu_r", vmin=-lim, vmax=lim, interpolation="nearest")
            axes[2].set_title("error vs GT [px]")
            axes[2].grid(False)
            fig.colorbar(im, ax=axes[2], shrink=0.8)
        return _save(fig, path)


def plot_texture(path, rgba):
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(7, 3.4))
        axes[0].imshow(np.clip(rgba[..., :3], 0, 1), interpolation="nearest")
        axes[0].set_title("texture")
        im = axes[1].imshow(rgba[..., 3], vmin=0, vmax=1, cmap="gray", interpolation="nearest")
        axes[1].set_title("alpha")
        for ax in axes:
            ax.grid(False)
        fig.colorbar(im, ax=axes[1], shrink=0.8)
        return _save(fig, path)


def plot_sweep(path, result):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.2, 3.4))
        rows = np.array(result.rows, dtype=float)
        if result.mode == "reconstruction":
            ax.semilogy(rows[:, 0], np.maximum(rows[:, 1], 1e-18), ".", ms=4)
            ax.axhline(result.tolerance, color="C3", lw=1, label="tolerance")
            ax.set_xlabel("image")
            ax.set_ylabel("max interior error")
        elif result.mode == "shift-theorem":
            for seed in np.unique(rows[:, 0]):
                sel = rows[:, 0] == seed
                ax.plot(np.arange(sel.sum()), rows[sel, 5], ".-", lw=0.8, label=f"texture {int(seed)}")
            ax.axhline(result.tolerance, color="C3", lw=1, label="tolerance")
            ax.set_xlabel("shift index (dx, dy) row-major")
            ax.set_ylabel("peak position error [px]")
        else:
            ax.plot(rows[:, 0], rows[:, 2], "-", color="C1", label="single pass")
            ax.plot(rows[:, 0], rows[:, 1], "-", color="C0", label="refined")
            for sign in (-1, 1):
                ax.axhline(sign * result.tolerance, color="C3", lw=0.8, ls="--")
            ax.set_xlabel("true disparity [px]")
            ax.set_ylabel("mean signed error [px]")
        ax.set_title(result.mode)
        ax.legend(frameon=False, fontsize=8)
        return _save(fig, path)


def plot_bench(path, rows, stages):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.2, 3.2))
        data = np.array([[r[s] for s in stages] for r in rows])
        bottom = np.zeros(len(rows))
        for k, stage in enumerate(stages):
            ax.bar(np.arange(len(rows)), data[:, k], bottom=bottom, label=stage)
            bottom += data[:, k]
        ax.set_xlabel("repeat")
        ax.set_ylabel("seconds")
        ax.legend(frameon=False, fontsize=8)
        return _save(fig, path)
