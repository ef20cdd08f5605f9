"""Rendering of run artifacts: loss curves, optimality-bound traces and the
restoration benchmark chart as PNG files, next to delimited/JSON outputs.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def plot_loss_curves(histories: dict, path: str | Path) -> None:
    """Per-epoch training losses, log scale, one line per model."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, hist in histories.items():
        ax.semilogy(np.arange(1, len(hist) + 1), hist, label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_bounds_trace(lower: list, upper: list, path: str | Path) -> None:
    """Optimality bounds across outer iterations of the robust solve."""
    fig, ax = plt.subplots(figsize=(6, 4))
    it = np.arange(1, len(lower) + 1)
    ax.plot(it, lower, "o-", label="lower bound")
    ax.plot(it, upper, "s-", label="upper bound")
    ax.set_xlabel("iteration")
    ax.set_ylabel("objective")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_restoration(report, path: str | Path) -> None:
    """Grouped bars of restored load per step for both methods."""
    steps = [s["step"] for s in report.steps]
    osg = [s["osg"]["restored_pct"] if s["osg"] else 0.0 for s in report.steps]
    ccg = [s["ccg"]["restored_pct"] if s["ccg"] else 0.0 for s in report.steps]
    xpos = np.arange(len(steps))
    w = 0.38
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(xpos - w / 2, osg, w, label="surrogate (online)")
    ax.bar(xpos + w / 2, ccg, w, label="robust solve")
    ax.set_xticks(xpos, [str(s) for s in steps])
    ax.set_xlabel("restoration step")
    ax.set_ylabel("restored load [%]")
    ax.set_ylim(0, 105)
    ax.legend()
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_history_csv(histories: dict, path: str | Path) -> None:
    names = list(histories)
    n = max(len(h) for h in histories.values())
    with open(path, "w") as fh:
        fh.write("epoch," + ",".join(names) + "\n")
        for e in range(n):
            cells = [f"{histories[k][e]:.10g}" if e < len(histories[k]) else ""
                     for k in names]
            fh.write(f"{e + 1}," + ",".join(cells) + "\n")


def write_json(data: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=True))
