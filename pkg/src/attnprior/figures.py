"""Rendered views of the pipeline: smoothed stacks, bias matrices, training
curves, and ablation score bars.  All helpers write PNG files and are safe
to call headless."""

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 120


def save_mask_stack_figure(path, fused, stack, kernel_sizes=None) -> None:
    """Fused mask plus every smoothed layer as one montage."""
    n_panels = stack.n_layers + 1
    cols = min(7, n_panels)
    rows = math.ceil(n_panels / cols)
    fig, axes = plt.subplots(rows, cols, figsize=(2.0 * cols, 2.2 * rows))
    axes = np.atleast_1d(axes).ravel()
    axes[0].imshow(fused, cmap="viridis", vmin=0.0, vmax=1.0)
    axes[0].set_title("fused", fontsize=9)
    for layer in range(1, stack.n_layers + 1):
        ax = axes[layer]
        ax.imshow(stack.layer(layer), cmap="viridis", vmin=0.0, vmax=1.0)
        if kernel_sizes is not None:
            ax.set_title(f"layer {layer} (k={kernel_sizes[layer - 1]})", fontsize=9)
        else:
            ax.set_title(f"layer {layer}", fontsize=9)
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
    for ax in axes[n_panels:]:
        ax.set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_bias_heatmap(path, matrix, title="") -> None:
    """Bias matrix with -inf cells blacked out."""
    arr = np.asarray(matrix, dtype=np.float64)
    masked = np.ma.masked_where(np.isneginf(arr), arr)
    cmap = plt.get_cmap("viridis").copy()
    cmap.set_bad("black")
    fig, ax = plt.subplots(figsize=(8.0, max(2.0, 8.0 * arr.shape[0] / max(arr.shape[1], 1))))
    im = ax.imshow(masked, cmap=cmap, aspect="auto", interpolation="nearest")
    fig.colorbar(im, ax=ax, shrink=0.8)
    ax.set_xlabel("key position")
    ax.set_ylabel("query row")
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_loss_curve_figure(path, losses, lrs) -> None:
    steps = np.arange(len(losses))
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    ax.plot(steps, losses, lw=0.8, color="tab:blue", label="train loss")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    twin = ax.twinx()
    twin.plot(steps, lrs, lw=0.8, ls="--", color="tab:orange", label="lr")
    twin.set_ylabel("learning rate")
    lines = ax.get_lines() + twin.get_lines()
    ax.legend(lines, [ln.get_label() for ln in lines], loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_ablation_figure(path, report) -> None:
    """Per-mode mean scores with per-seed points overlaid."""
    modes = [m.value for m in report.config.modes]
    metrics = ("region_token_accuracy", "token_accuracy")
    labels = ("region tokens", "all tokens")
    width = 0.35
    xs = np.arange(len(modes))
    fig, ax = plt.subplots(figsize=(1.8 * len(modes) + 2.5, 4.0))
    for k, (metric, label) in enumerate(zip(metrics, labels)):
        means = [report.mean_metric(m, metric) for m in modes]
        offset = (k - 0.5) * width
        ax.bar(xs + offset, means, width=width, label=label, alpha=0.85)
        for x, mode in zip(xs, modes):
            pts = [getattr(r, metric) for r in report.runs_for(mode)]
            ax.plot([x + offset] * len(pts), pts, "k.", ms=4)
    ax.set_xticks(xs)
    ax.set_xticklabels(modes)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("accuracy")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
