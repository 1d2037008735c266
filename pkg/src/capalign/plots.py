"""Figure rendering for training logs, evaluation reports, and the joint
embedding space.  All figures are written to files; no interactive backend.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_lm_log(log, path) -> None:
    epochs = [row.epoch for row in log]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    axes[0].plot(epochs, [row.loss_ce for row in log], label="reconstruction")
    axes[0].plot(epochs, [row.loss_triplet for row in log], label="triplet")
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("loss")
    axes[0].legend(frameon=False)
    axes[1].plot(epochs, [row.ratio_intra_inter for row in log], color="tab:green")
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("intra/inter distance ratio")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_align_log(log, path) -> None:
    epochs = [row.epoch for row in log]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    axes[0].plot(epochs, [row.loss_ce for row in log], label="caption CE")
    axes[0].plot(epochs, [row.loss_robust for row in log], label="robust")
    axes[0].plot(epochs, [row.loss_adv for row in log], label="adversarial")
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("loss")
    axes[0].legend(frameon=False)
    axes[1].plot(epochs, [row.wasserstein for row in log], label="wasserstein estimate")
    axes[1].plot(epochs, [row.grad_penalty for row in log], label="gradient penalty")
    axes[1].set_xlabel("epoch")
    axes[1].legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_report(report, path) -> None:
    names = ["bleu1", "bleu2", "bleu3", "bleu4", "rougeL", "unique_rate", "novel_rate"]
    values = [getattr(report, n) for n in names]
    fig, ax = plt.subplots(figsize=(6.5, 3.2))
    ax.bar(range(len(names)), values, color="tab:blue")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylim(0, 1)
    ax.set_ylabel("score")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def pca_2d(x: np.ndarray) -> np.ndarray:
    centered = x - x.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return centered @ vt[:2].T


def plot_embedding_scatter(embeddings: np.ndarray, is_text: np.ndarray, labels: np.ndarray, path) -> None:
    """2-d PCA projection of the joint space; text as circles, images as crosses."""
    coords = pca_2d(embeddings)
    fig, ax = plt.subplots(figsize=(5.5, 5))
    cmap = plt.get_cmap("tab10")
    unique_labels = {lab: i for i, lab in enumerate(sorted(set(labels.tolist())))}
    colors = [cmap(unique_labels[lab] % 10) for lab in labels.tolist()]
    text_idx = np.flatnonzero(is_text)
    img_idx = np.flatnonzero(~is_text)
    ax.scatter(coords[text_idx, 0], coords[text_idx, 1],
               c=[colors[i] for i in text_idx], marker="o", s=12, alpha=0.6, label="text")
    ax.scatter(coords[img_idx, 0], coords[img_idx, 1],
               c=[colors[i] for i in img_idx], marker="x", s=22, alpha=0.9, label="image")
    ax.legend(frameon=False)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
