"""Optional figures for CLI output; needs matplotlib (the ``plot`` extra)."""

from __future__ import annotations

from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .bench import count_ops  # noqa: E402


def plot_ser(rows, path, title=""):
    """SER against SNR on a log axis, one line per detector; zero-error points are dropped."""
    curves = defaultdict(list)
    for row in rows:
        if row["ser"] > 0:
            curves[row["detector"]].append((row["snr_db"], row["ser"]))
    fig, ax = plt.subplots(figsize=(5, 4))
    for name, pts in curves.items():
        pts.sort()
        ax.semilogy([p[0] for p in pts], [p[1] for p in pts], marker="o", label=name)
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel("SER")
    ax.grid(True, which="both", alpha=0.3)
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_history(history, path):
    fig, ax = plt.subplots(figsize=(5, 4))
    epochs = [h["epoch"] for h in history]
    ax.plot(epochs, [h["train_loss"] for h in history], label="train loss")
    ax.plot(epochs, [h["val_loss"] for h in history], label="validation loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean squared error")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_complexity(M, Q, T, L, path):
    """Totals for square systems up to ``M`` users, doubling each step."""
    sizes = []
    n = 2
    while n <= M:
        sizes.append(n)
        n *= 2
    reps = [count_ops(k, k, Q, T, L) for k in sizes]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(sizes, [r.amp_total for r in reps], marker="o", label="AMP")
    ax.loglog(sizes, [r.ampgnn_total for r in reps], marker="s", label="AMP-GNN")
    ax.loglog(sizes, [r.lmmse_gnn_total for r in reps], marker="^", label="LMMSE + GNN")
    ax.set_xlabel("users N (M = N)")
    ax.set_ylabel("real multiplications per vector")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
