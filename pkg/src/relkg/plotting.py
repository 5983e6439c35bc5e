"""Report figures written next to the tabular outputs (Agg backend, no display)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_eval_report(report, path: str | Path) -> Path:
    """Per-relation precision/recall/F1 bars plus the micro average."""
    names = sorted(report.per_relation) + ["micro"]
    scores = [report.per_relation[n] for n in names[:-1]] + [report.micro]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(max(6, 0.6 * len(names) + 2), 4))
    for metric, offset in (("precision", -0.27), ("recall", 0.0), ("f1", 0.27)):
        ax.bar(x + offset, [getattr(s, metric) for s in scores], width=0.27, label=metric)
    ax.set_xticks(x, names, rotation=45, ha="right")
    ax.set_ylim(0, 100)
    ax.set_ylabel("%")
    ax.set_title(f"relation scores ({report.split})" if report.split else "relation scores")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def plot_ablation(rows: Sequence, path: str | Path) -> Path:
    names = [r.name for r in rows]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(max(6, 0.9 * len(names) + 2), 4))
    ax.bar(x - 0.2, [r.dev.f1 for r in rows], width=0.4, label="dev F1")
    ax.bar(x + 0.2, [r.test.f1 for r in rows], width=0.4, label="test F1")
    ax.set_xticks(x, names, rotation=30, ha="right")
    ax.set_ylim(0, 100)
    ax.set_ylabel("F1 (%)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def plot_training(traces: Sequence[dict], path: str | Path) -> Path:
    """Per-epoch losses of both modules, one segment per fit, fits laid end to end."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.5))
    for ax, module in zip(axes, ("prediction", "retrieval")):
        start = 0
        for t in traces:
            ys = t.get(module) or []
            ax.plot(np.arange(start, start + len(ys)), ys, lw=1)
            if start:
                ax.axvline(start, color="0.8", lw=0.5)
            start += len(ys)
        ax.set_title(f"{module} loss")
        ax.set_xlabel("epoch (cumulative)")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)
