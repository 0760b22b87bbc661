"""Figure rendering for basis dumps and experiment reports.

Everything draws to files via the Agg backend; the CLI calls these when an
output directory is given, next to the CSV/JSON artifacts they illustrate.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def save_basis_figure(elements, bias_elements, path: str, title: str | None = None) -> None:
    """Montage of basis elements as matrices, with bias elements on the right."""
    total = len(elements) + len(bias_elements)
    cols = math.ceil(math.sqrt(total))
    rows = math.ceil(total / cols)
    fig, axes = plt.subplots(rows, cols, figsize=(2.2 * cols, 2.2 * rows))
    axes = np.atleast_1d(axes).ravel()
    for ax in axes[total:]:
        ax.axis("off")
    for ax, elem in zip(axes, elements):
        ax.imshow(elem.as_matrix(), cmap="Greys", interpolation="nearest")
        ax.set_title(str(elem.partition), fontsize=8)
        ax.set_xticks([])
        ax.set_yticks([])
    for ax, elem in zip(axes[len(elements) :], bias_elements):
        ax.imshow(elem.materialize().data[..., 0].reshape(elem.n, -1), cmap="Purples", interpolation="nearest")
        ax.set_title(f"bias {elem.partition}", fontsize=8)
        ax.set_xticks([])
        ax.set_yticks([])
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_training_curves(report, path: str) -> None:
    """Per-depth training loss curves on a log scale."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for run in report.runs:
        ax.semilogy(run.history, label=f"depth {run.depth}")
    ax.axhline(report.baseline, color="gray", linestyle="--", label="trivial predictor")
    ax.set_xlabel("epoch")
    ax.set_ylabel(f"train {report.loss_kind}")
    ax.set_title(f"{report.task.kind} / {report.basis} basis (n={report.task.n})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_experiment_bars(report, path: str) -> None:
    """Best test loss per depth against the trivial predictor."""
    fig, ax = plt.subplots(figsize=(6, 4))
    depths = [str(r.depth) for r in report.runs]
    losses = [max(r.test_loss, 1e-12) for r in report.runs]
    ax.bar(depths, losses, color="steelblue")
    ax.axhline(report.baseline, color="gray", linestyle="--", label="trivial predictor")
    ax.set_yscale("log")
    ax.set_xlabel("depth")
    ax.set_ylabel(f"test {report.loss_kind}")
    ax.set_title(f"{report.task.kind} / {report.basis} basis (n={report.task.n})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_generalization_figure(report, path: str) -> None:
    """Loss of the best net applied, unchanged, at other node counts."""
    sizes = sorted(report.generalization)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(sizes, [max(report.generalization[s], 1e-12) for s in sizes], "o-")
    ax.axvline(report.task.n, color="gray", linestyle=":", label=f"trained at n={report.task.n}")
    ax.set_xlabel("node count at evaluation")
    ax.set_ylabel(f"test {report.loss_kind}")
    ax.set_title(f"{report.task.kind}: size transfer with zero retraining")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
