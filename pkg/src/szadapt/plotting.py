"""Figure helpers for training curves, AUC summaries and scatter plots.

Figures are written with a fixed hash salt and without a date stamp so
repeated runs produce identical SVG files.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GOLDEN = (math.sqrt(5) - 1.0) / 2.0
MARKERS = ("o", "^", "s", "D", "v", "P", "X")

STYLE = {
    "font.size": 8,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.0,
    "lines.markersize": 3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "szadapt",
    "svg.fonttype": "path",
}


def new_figure(width=4.5, height=None, ncols=1):
    if height is None:
        height = width * GOLDEN
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, ncols, figsize=(width, height), squeeze=False)
    return fig, axes[0]


def save_figure(fig, path):
    """Save and close ``fig``; the format follows the file suffix."""
    path = Path(path)
    meta = {"Date": None} if path.suffix in (".svg", ".pdf") else {}
    with plt.rc_context(STYLE):
        fig.savefig(path, metadata=meta, bbox_inches="tight")
    plt.close(fig)
    return path


def history_figure(history, title=None):
    """Loss curves and divergence/accuracy diagnostics per epoch."""
    epochs = [r.epoch for r in history]
    fig, (ax_loss, ax_diag) = new_figure(width=7.0, height=2.6, ncols=2)
    with plt.rc_context(STYLE):
        ax_loss.plot(epochs, [r.adv_loss for r in history], label="discriminator CE")
        ax_loss.plot(epochs, [r.rec_loss for r in history], label="reconstruction")
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("loss")
        ax_loss.legend(frameon=False)
        ax_diag.plot(epochs, [r.sd_holdout_acc for r in history], label="held-out SD accuracy")
        ax_diag.plot(epochs, [r.jsd_estimate for r in history], label="latent divergence")
        ax_diag.set_xlabel("epoch")
        ax_diag.legend(frameon=False)
        if title:
            fig.suptitle(title)
    return fig


def auc_figure(report, title=None):
    """Mean AUC across subjects against the number of training blocks."""
    from .evaluation import SCHEMES

    fig, (ax,) = new_figure()
    with plt.rc_context(STYLE):
        for k, scheme in enumerate(SCHEMES):
            ns = sorted({r.n for r in report.results if r.scheme == scheme})
            pts = [(n, report.average(scheme, n)) for n in ns]
            pts = [(n, c) for n, c in pts if c is not None]
            if not pts:
                continue
            ax.errorbar([n for n, _ in pts], [c[0] for _, c in pts],
                        yerr=[c[1] for _, c in pts], marker=MARKERS[k], capsize=2,
                        label=scheme)
        ax.set_xlabel("training blocks of the target subject (n)")
        ax.set_ylabel("AUC")
        ax.legend(frameon=False)
        if title:
            ax.set_title(title)
    return fig


def scatter_figure(emb, title=None):
    """2-D scatter: colour per subject, marker per class, one legend entry each pair."""
    fig, (ax,) = new_figure(width=4.5, height=4.0)
    subjects = sorted(set(emb.subjects.tolist()))
    classes = sorted(set(int(c) for c in emb.labels))
    cmap = plt.get_cmap("tab10" if len(subjects) <= 10 else "tab20")
    with plt.rc_context(STYLE):
        for si, s in enumerate(subjects):
            for c in classes:
                mask = (emb.subjects == s) & (emb.labels == c)
                if not mask.any():
                    continue
                ax.scatter(emb.coords[mask, 0], emb.coords[mask, 1], s=6,
                           color=cmap(si % cmap.N), marker=MARKERS[c % len(MARKERS)],
                           alpha=0.7, linewidths=0, label=f"{s} class {c}")
        ax.set_xticks([])
        ax.set_yticks([])
        ax.legend(frameon=False, markerscale=2, loc="center left", bbox_to_anchor=(1.0, 0.5))
        if title:
            ax.set_title(title)
    return fig


def legend_labels(fig):
    return [t.get_text() for ax in fig.axes if ax.get_legend()
            for t in ax.get_legend().get_texts()]


def kl_figure(kl_history):
    fig, (ax,) = new_figure()
    with plt.rc_context(STYLE):
        ax.plot(np.arange(1, len(kl_history) + 1), kl_history)
        ax.set_xlabel("iteration")
        ax.set_ylabel("KL(P || Q)")
    return fig
