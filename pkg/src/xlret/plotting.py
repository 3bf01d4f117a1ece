"""Figures written next to the CSV/JSON reports.

Everything renders through the Agg backend straight to files; PNG metadata
is stripped so identical inputs give identical bytes.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {
    "font.size": 10,
    "axes.titlesize": 11,
    "axes.labelsize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
}


def _save(fig, path: str | os.PathLike) -> None:
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)


def plot_loss_curve(loss_log, path: str | os.PathLike, title: str = "training loss") -> None:
    """Per-batch loss (faint) and per-epoch mean (solid) on a log axis."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        if len(loss_log):
            losses = np.array([e[2] for e in loss_log.entries])
            ax.plot(np.arange(len(losses)), losses, lw=0.6, alpha=0.35, color="C0", label="batch")
            means = loss_log.epoch_means()
            # x position of each epoch mean: index of that epoch's last entry
            last = {}
            for i, (epoch, *_rest) in enumerate(loss_log.entries):
                last[epoch] = i
            ax.plot([last[e] for e in means], list(means.values()), "o-", ms=3, color="C1", label="epoch mean")
            if np.all(losses > 0):
                ax.set_yscale("log")
            ax.legend()
        ax.set_xlabel("logged batch")
        ax.set_ylabel("loss")
        ax.set_title(title)
        _save(fig, path)


def plot_recall(report, path: str | os.PathLike) -> None:
    """Grouped bars: one group per language, one bar per K."""
    langs = report.languages()
    ks = list(report.k_list)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(max(4, 0.9 * len(langs) + 2), 3.5))
        width = 0.8 / max(1, len(ks))
        x = np.arange(len(langs))
        for j, k in enumerate(ks):
            vals = [100 * report.recall(l, k) for l in langs]
            ax.bar(x + (j - (len(ks) - 1) / 2) * width, vals, width, label=f"R@{k}")
        ax.set_xticks(x, langs)
        ax.set_ylim(0, 100)
        ax.set_ylabel("recall (%)")
        ax.set_title(f"zero-shot retrieval ({report.distance})")
        ax.legend(ncol=len(ks))
        _save(fig, path)


def plot_alignment(report, path: str | os.PathLike) -> None:
    labels = [f"{e.lang_a}-{e.lang_b}" for e in report.entries]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(max(4, 0.7 * len(labels) + 2), 3.5))
        ax.bar(np.arange(len(labels)), [e.ratio for e in report.entries], color="C2")
        ax.axhline(1.0, ls="--", lw=0.8, color="0.4")
        ax.set_xticks(np.arange(len(labels)), labels, rotation=45 if len(labels) > 6 else 0)
        ax.set_ylabel("paired / mismatched distance")
        ax.set_title(f"cross-lingual alignment ({report.space} space)")
        _save(fig, path)
