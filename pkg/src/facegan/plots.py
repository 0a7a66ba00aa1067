"""Matplotlib report figures, written next to the delimited outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_metric_histograms(report, path) -> Path:
    """One histogram panel per metric present in the report rows."""
    from .evaluation import METRIC_COLUMNS
    cols = [c for c in METRIC_COLUMNS if any(c in r for r in report.rows)]
    fig, axes = plt.subplots(1, max(len(cols), 1), figsize=(3.2 * max(len(cols), 1), 2.8))
    if len(cols) <= 1:
        axes = [axes]
    for ax, col in zip(axes, cols):
        vals = [r[col] for r in report.rows if col in r]
        ax.hist(vals, bins=min(20, max(5, len(vals) // 3)), color="#4878a8")
        ax.axvline(sum(vals) / len(vals), color="#b04040", lw=1.2)
        ax.set_title(f"{col} (mean {sum(vals) / len(vals):.4f})", fontsize=9)
        ax.tick_params(labelsize=7)
    fig.suptitle(f"{report.mode}-reenactment, {len(report.rows)} pairs", fontsize=10)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_training_history(history: list[dict], path, keys: tuple[str, ...] = ()) -> Path:
    """Loss curves from a trainer history list."""
    rows = [h for h in history if "total" in h]
    if not keys:
        keys = tuple(k for k in rows[0] if k not in ("step", "stage", "event")) if rows else ()
    fig, ax = plt.subplots(figsize=(6, 3.2))
    for key in keys:
        pts = [(h["step"], h[key]) for h in rows if key in h]
        if pts:
            ax.plot(*zip(*pts), label=key, lw=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=7)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
