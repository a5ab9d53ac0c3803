"""Figure rendering for the analysis exporters.

Every report table the CLI writes gets a companion PNG rendered here;
all figures use the Agg backend so headless runs work.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def embedding_figure(rows, path, title="Embedding coordinates"):
    """rows: (n, 1+d) with x in column 0. One curve per coordinate."""
    rows = np.asarray(rows)
    fig, ax = plt.subplots(figsize=(7, 4))
    for k in range(1, rows.shape[1]):
        ax.plot(rows[:, 0], rows[:, k], lw=0.8)
    ax.set_xlabel("normalized feature value")
    ax.set_ylabel("embedding coordinate")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def soft_distribution_figure(rows, path, title="Bucket probabilities"):
    """rows: (n, 2+H) with x, tau, then probabilities."""
    rows = np.asarray(rows)
    fig, (ax0, ax1) = plt.subplots(
        2, 1, figsize=(7, 5), sharex=True,
        gridspec_kw={"height_ratios": [3, 1]})
    probs = rows[:, 2:].T  # (H, n)
    ax0.imshow(probs, aspect="auto", origin="lower", cmap="viridis",
               extent=[rows[0, 0], rows[-1, 0], -0.5, probs.shape[0] - 0.5])
    ax0.set_ylabel("bucket")
    ax0.set_title(title)
    ax1.plot(rows[:, 0], rows[:, 1], color="tab:red", lw=1.0)
    ax1.set_xlabel("normalized feature value")
    ax1.set_ylabel("temperature")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def history_figure(history, path):
    """Training-loss and validation-metric curves per epoch."""
    epochs = [h["epoch"] for h in history]
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax0.plot(epochs, [h["train_loss"] for h in history], marker="o")
    ax0.set_xlabel("epoch")
    ax0.set_ylabel("train loss")
    ax1.plot(epochs, [h["valid_auc"] for h in history], marker="o",
             label="AUC")
    ax1.plot(epochs, [h["valid_logloss"] for h in history], marker="s",
             label="LogLoss")
    ax1.set_xlabel("epoch")
    ax1.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def ablation_figure(reports, path):
    """AUC/LogLoss versus number of numerical fields included."""
    ks = list(range(len(reports)))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(ks, [r.auc for r in reports], marker="o", label="AUC")
    ax2 = ax.twinx()
    ax2.plot(ks, [r.logloss for r in reports], marker="s",
             color="tab:orange", label="LogLoss")
    ax.set_xlabel("numerical fields included")
    ax.set_ylabel("AUC")
    ax2.set_ylabel("LogLoss")
    ax.set_xticks(ks)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
