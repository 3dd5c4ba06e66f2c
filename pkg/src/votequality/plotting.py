"""Figure helpers for the report command. All figures are written as SVG."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "votequality",  # stable element ids across runs
}


def new_figure(width=4.5, height=None):
    golden = (5**0.5 - 1) / 2
    height = height or width * golden
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(width, height))
    return fig, ax


def save(fig, path):
    with plt.rc_context(STYLE):
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def position_bias(curve, path, label=None):
    fig, ax = new_figure()
    ax.plot(curve.positions, curve.rates, marker=".", ms=3, lw=1, label=label)
    ax.set_xlabel("position")
    ax.set_ylabel("relative view rate")
    ax.set_ylim(0, 1.05)
    if label:
        ax.legend(frameon=False)
    return save(fig, path)


def quality_vs_score(quantiles, log_scores, path):
    fig, ax = new_figure()
    ax.scatter(quantiles, log_scores, s=6, alpha=0.6, lw=0)
    ax.set_xlabel("quality quantile")
    ax.set_ylabel("normalized log score")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    return save(fig, path)


def predicted_vs_actual(actual, predicted, path, xlabel="actual", ylabel="predicted"):
    fig, ax = new_figure(width=3.5, height=3.5)
    ax.scatter(actual, predicted, s=8, alpha=0.7, lw=0)
    top = max(max(actual, default=1), max(predicted, default=1))
    ax.plot([0, top], [0, top], color="0.6", lw=0.8, ls="--")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    return save(fig, path)


def cohort_pages(summaries, path):
    fig, ax = new_figure()
    ax.boxplot([s.final_scores for s in summaries])
    ax.set_xticks(range(1, len(summaries) + 1), [str(s.page) for s in summaries])
    ax.set_xlabel("initial page")
    ax.set_ylabel("final score")
    return save(fig, path)
