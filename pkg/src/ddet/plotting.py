"""Report figures.  Everything renders off-screen (Agg) straight to files."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "axes.spines.right": False,
    "axes.spines.top": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
}

# PNG metadata left empty so repeated runs write identical bytes
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_training_curve(history: Sequence[dict], path, title: str = "training") -> Path:
    steps = [r["step"] for r in history]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.4, 3.6))
        ax.plot(steps, [r["loss"] for r in history], lw=1.2, color="#1f77b4", label="L1 loss")
        ax.set_xlabel("step")
        ax.set_ylabel("L1 loss")
        ax.set_yscale("log")
        ev = [(r["step"], r["eval_psnr"]) for r in history if r.get("eval_psnr") is not None]
        if ev:
            ax2 = ax.twinx()
            ax2.plot(*zip(*ev), "o-", ms=3, color="#d62728", label="eval PSNR")
            ax2.set_ylabel("eval PSNR (dB)")
            ax2.grid(False)
        ax.set_title(title)
        return _save(fig, path)


def plot_ablation(rows: Sequence[tuple], path, mode: str = "y") -> Path:
    """Bar chart of ``(label, psnr_db)`` rows."""
    labels = [r[0] for r in rows]
    values = [r[1] for r in rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        bars = ax.bar(labels, values, color=["#9e9e9e", "#6baed6", "#3182bd", "#08519c"][: len(rows)])
        lo = min(values)
        ax.set_ylim(lo - max(0.5, 0.1 * abs(lo)), max(values) + 0.3)
        for b, v in zip(bars, values):
            ax.annotate(f"{v:.2f}", (b.get_x() + b.get_width() / 2, v), ha="center", va="bottom", fontsize=8)
        ax.set_ylabel(f"PSNR ({mode}) dB")
        ax.set_title("ablation")
        return _save(fig, path)


def plot_bench(rows, path) -> Path:
    """Time per frame against parameter size, one labelled point per model."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.6))
        for r in rows:
            ax.scatter(r.megabytes, r.seconds_per_frame, s=30)
            ax.annotate(r.name, (r.megabytes, r.seconds_per_frame), textcoords="offset points",
                        xytext=(4, 4), fontsize=8)
        ax.set_xlabel("parameters (MB, fp32)")
        ax.set_ylabel("time / frame (s)")
        ax.set_title("efficiency")
        return _save(fig, path)
