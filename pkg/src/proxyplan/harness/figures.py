"""Matplotlib figures of success-rate curves."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def success_curves(rows: list[dict], path, title: str = "") -> Path:
    """One panel per difficulty: mean success over seeds against interactions, with CI bands."""
    diffs = sorted({r["difficulty"] for r in rows}, key=lambda d: (d != "train", d))
    agents = sorted({r["agent"] for r in rows})
    fig, axes = plt.subplots(1, max(1, len(diffs)), figsize=(3.2 * max(1, len(diffs)), 3.0),
                             sharey=True, squeeze=False)
    for ax, d in zip(axes[0], diffs):
        for a in agents:
            pts = sorted((r["interactions"], r["mean"], r["ci_half_width"])
                         for r in rows if r["agent"] == a and r["difficulty"] == d)
            if not pts:
                continue
            x, m, h = zip(*pts)
            ax.plot(x, m, label=a)
            ax.fill_between(x, [u - v for u, v in zip(m, h)], [u + v for u, v in zip(m, h)], alpha=0.2)
        ax.set_title("training tasks" if d == "train" else f"difficulty {d}")
        ax.set_xlabel("interactions")
        ax.set_ylim(-0.02, 1.02)
    axes[0][0].set_ylabel("success rate")
    axes[0][-1].legend(fontsize=7)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def bar_chart(labels, values, path, ylabel: str, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.bar(range(len(values)), values)
    ax.set_xticks(range(len(values)), labels, rotation=20, fontsize=7)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
