"""Figure files written next to the CSV and gnuplot outputs."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

LABELS = {"proposed": "Proposed", "proposed_with_ica": "Proposed with ICA",
          "control": "Untrained + ICA"}


def plot_trace(trace, path, title=None):
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3.2))
    a1.plot(trace.epoch, trace.loss, marker=".")
    a1.set_xlabel("epoch")
    a1.set_ylabel("logistic loss")
    a2.plot(trace.epoch, trace.accuracy, marker=".")
    a2.axhline(0.5, color="grey", lw=0.8, ls="--")
    a2.set_xlabel("epoch")
    a2.set_ylabel("accuracy")
    if title:
        fig.suptitle(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_sweep(stats, path, xlabel="segments", title=None, cells=None):
    """``stats`` as returned by ``pipeline.sweep_stats``; ``cells`` (the
    per-seed sweep cells) adds one faint dot per seed."""
    fig, ax = plt.subplots(figsize=(5, 3.6))
    xs = [v for v, _ in stats]
    numeric = all(isinstance(v, (int, float)) for v in xs)
    pos = xs if numeric else list(range(len(xs)))
    for m, label in LABELS.items():
        pts = [(p, per[m]) for p, (_, per) in zip(pos, stats) if m in per]
        if not pts:
            continue
        bar = ax.errorbar([p for p, _ in pts], [ms[0] for _, ms in pts],
                          yerr=[ms[1] for _, ms in pts], marker="o", capsize=3, label=label)
        if cells:
            where = dict(zip(xs, pos))
            dots = [(where[c["value"]], c["summary"][m]) for c in cells
                    if c["ok"] and m in c["summary"] and c["value"] in where]
            if dots:
                ax.scatter(*zip(*dots), s=9, alpha=0.4, color=bar[0].get_color())
    if numeric and len(xs) > 1 and min(xs) > 0 and max(xs) / min(xs) >= 10:
        ax.set_xscale("log")
    if not numeric:
        ax.set_xticks(pos, [str(v) for v in xs])
    ax.set_xlabel(xlabel)
    ax.set_ylabel("mean correlation")
    ax.set_ylim(0, 1.02)
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_correlation(corr, path, title=None):
    n = len(corr)
    fig, ax = plt.subplots(figsize=(1.2 + 0.6 * n, 1 + 0.6 * n))
    im = ax.imshow(corr, vmin=-1, vmax=1, cmap="RdBu_r")
    ax.set_xlabel("estimated")
    ax.set_ylabel("true")
    fig.colorbar(im, ax=ax, shrink=0.8)
    if title:
        ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path

