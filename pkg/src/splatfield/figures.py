"""Report figures.

Every CLI report that writes delimited output also renders a small PNG
summary next to it. All helpers save to ``path`` and return it, use the
Agg backend (no display), and close their figure so long batch runs don't
accumulate state.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def loss_curve(history, path, title: str = "training loss"):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(np.arange(len(history)), history, lw=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def series_plot(series: dict, path, xlabel: str = "frame", ylabel: str = "",
                title: str = ""):
    """One line per named series, shared x = index."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, values in series.items():
        ax.plot(np.arange(len(values)), values, label=name, lw=1.0)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if series:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def success_bars(rates: dict, path, title: str = "success rate"):
    fig, ax = plt.subplots(figsize=(6, 4))
    names = list(rates)
    vals = [rates[n] for n in names]
    ax.bar(np.arange(len(names)), vals, color="#4878cf")
    ax.set_xticks(np.arange(len(names)))
    ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("success rate")
    ax.set_title(title)
    for i, v in enumerate(vals):
        ax.text(i, v + 0.02, f"{v:.2f}", ha="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def extract_scatter(centers, members, centroid, path, title: str = "extracted object"):
    """Top-down scatter of the scene with the extracted members marked."""
    centers = np.asarray(centers)
    member_set = np.zeros(centers.shape[0], dtype=bool)
    member_set[np.asarray(members, dtype=np.int64)] = True
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(centers[~member_set, 0], centers[~member_set, 1],
               s=6, c="#bbbbbb", label="other")
    ax.scatter(centers[member_set, 0], centers[member_set, 1],
               s=8, c="#d65f5f", label="object")
    ax.plot([centroid[0]], [centroid[1]], marker="x", ms=10, c="black",
            label="centroid")
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
