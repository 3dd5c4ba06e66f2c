"""Prediction accuracy, cross-validation and quality/popularity analyses."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np
from scipy.stats import binomtest, rankdata

from .estimator import FitOptions, FitResult, Observation, Variant, fit, predict_observations
from .quality import (
    QualityReport,
    SiteMode,
    VoteRatios,
    compute_vote_ratios,
    position_bias_curve,
)


@dataclass
class MetricsReport:
    r2: float
    mae: float
    mse: float
    n: int


def metrics(observed: Sequence[float], predicted: Sequence[float]) -> MetricsReport:
    y = np.asarray(observed, dtype=float)
    yhat = np.asarray(predicted, dtype=float)
    if y.shape != yhat.shape or y.size == 0:
        raise ValueError("observed and predicted must be equal, nonzero length")
    err = y - yhat
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        raise ValueError("R^2 is undefined for constant observations")
    ss_res = float(np.sum(err**2))
    return MetricsReport(
        r2=1.0 - ss_res / ss_tot,
        mae=float(np.mean(np.abs(err))),
        mse=ss_res / y.size,
        n=int(y.size),
    )


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation of average-tie ranks."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("need two equal-length sequences of at least 2 values")
    rx = rankdata(x) - (x.size + 1) / 2.0
    ry = rankdata(y) - (y.size + 1) / 2.0
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if denom == 0:
        raise ValueError("Spearman correlation is undefined for constant input")
    return max(-1.0, min(1.0, float(rx @ ry) / denom))


@dataclass
class CvReport:
    per_fold: list
    mean: MetricsReport
    sd: dict
    dropped: list = field(default_factory=list)  # held-out rows that could not be scored, per fold
    score_growth: "CvReport | None" = None
    predicted: np.ndarray | None = None  # held-out prediction per input row, nan where unscored
    pooled: MetricsReport | None = None  # metrics over all scored held-out rows at once

    def cell(self, metric: str, digits: int = 2) -> str:
        """``"mean (sd)"`` table cell."""
        return f"{getattr(self.mean, metric):.{digits}f} ({self.sd[metric]:.{digits}f})"


def _fold_metrics(observed, predicted) -> MetricsReport:
    """:func:`metrics`, with r2 left as nan on a constant held-out fold (e.g. a single row)."""
    try:
        return metrics(observed, predicted)
    except ValueError:
        y, yhat = np.asarray(observed, float), np.asarray(predicted, float)
        if y.size == 0:
            raise
        err = y - yhat
        return MetricsReport(r2=float("nan"), mae=float(np.mean(np.abs(err))), mse=float(np.mean(err**2)), n=int(y.size))


def _summarize(reports: list[MetricsReport], dropped: list[int]) -> CvReport:
    names = ("r2", "mae", "mse")
    arr = {k: np.array([getattr(r, k) for r in reports]) for k in names}
    r2 = arr["r2"][~np.isnan(arr["r2"])]
    arr["r2"] = r2 if r2.size else np.array([float("nan")])
    mean = MetricsReport(
        r2=float(arr["r2"].mean()),
        mae=float(arr["mae"].mean()),
        mse=float(arr["mse"].mean()),
        n=int(sum(r.n for r in reports)),
    )
    sd = {k: float(arr[k].std(ddof=1 if arr[k].size > 1 else 0)) for k in names}
    return CvReport(per_fold=reports, mean=mean, sd=sd, dropped=dropped)


def fold_assignment(n: int, k: int, seed: int) -> np.ndarray:
    """Fold label for each of ``n`` rows; folds differ in size by at most one."""
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= k <= n, got k={k}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.empty(n, dtype=np.intp)
    folds[perm] = np.arange(n) % k
    return folds


def _known(fit_result: FitResult, o: Observation) -> bool:
    return o.article_id in fit_result.q and o.position in fit_result.p


def _scorable(fit_result: FitResult, obs: Sequence[Observation]) -> list[Observation]:
    return [o for o in obs if _known(fit_result, o)]


def kfold_cv(
    observations: Sequence[Observation],
    variant: Variant = Variant.FULL,
    k: int = 5,
    seed: int = 0,
    mode: SiteMode = SiteMode.HN,
    options: FitOptions | None = None,
    folds: np.ndarray | None = None,
) -> CvReport:
    """Out-of-sample vote-count accuracy over ``k`` observation folds.

    Held-out rows whose article or position is absent from the training fit
    cannot be predicted and are counted in ``dropped``. A fold whose scored
    rows are all equal gets ``r2 = nan``, which the mean skips; ``pooled``
    scores every held-out prediction together. In Reddit mode the report
    also carries score-growth accuracy (``up - down`` against predicted votes
    times the training net vote share).
    """
    observations = list(observations)
    if folds is None:
        folds = fold_assignment(len(observations), k, seed)
    folds = np.asarray(folds)
    predicted = np.full(len(observations), np.nan)
    reports, dropped = [], []
    growth_reports = []
    for f in range(k):
        test_rows = np.flatnonzero(folds == f)
        train = [o for o, g in zip(observations, folds) if g != f]
        fitted = fit(train, variant, options)
        rows = [r for r in test_rows if _known(fitted, observations[r])]
        scored = [observations[r] for r in rows]
        dropped.append(len(test_rows) - len(rows))
        if not scored:
            continue
        pred = predict_observations(fitted, scored)
        predicted[rows] = pred
        reports.append(_fold_metrics([o.votes for o in scored], pred))
        if mode is SiteMode.REDDIT:
            ratios = compute_vote_ratios([o for o in train if o.article_id in fitted.q])
            net = np.array([ratios.r_up[o.article_id] - ratios.r_down[o.article_id] for o in scored])
            growth_reports.append(_fold_metrics([o.votes_up - o.votes_down for o in scored], pred * net))
    if not reports:
        raise ValueError("no held-out row could be scored")
    report = _summarize(reports, dropped)
    report.predicted = predicted
    done = ~np.isnan(predicted)
    report.pooled = _fold_metrics(np.array([o.votes for o in observations], dtype=float)[done], predicted[done])
    if growth_reports:
        report.score_growth = _summarize(growth_reports, dropped)
    return report


def in_sample_metrics(observations: Sequence[Observation], variant: Variant = Variant.FULL,
                      options: FitOptions | None = None) -> tuple[FitResult, MetricsReport]:
    fitted = fit(observations, variant, options)
    scored = _scorable(fitted, observations)
    return fitted, metrics([o.votes for o in scored], predict_observations(fitted, scored))


@dataclass
class ComparisonRow:
    variant: Variant
    mean_r2: float
    cv: CvReport
    non_monotone: bool


def model_comparison(
    observations: Sequence[Observation],
    variants: Sequence[Variant] = (Variant.BASE, Variant.BASE_TIME, Variant.FULL),
    k: int = 5,
    seed: int = 0,
    options: FitOptions | None = None,
) -> list[ComparisonRow]:
    """Cross-validated mean R^2 per variant on one shared fold assignment.

    Each row also flags a non-monotone position curve from the full-data fit.
    """
    observations = list(observations)
    folds = fold_assignment(len(observations), k, seed)
    rows = []
    for variant in variants:
        cv = kfold_cv(observations, variant, k=k, seed=seed, options=options, folds=folds)
        curve = position_bias_curve(fit(observations, variant, options))
        rows.append(ComparisonRow(variant, cv.mean.r2, cv, curve.non_monotone))
    return rows


@dataclass(frozen=True)
class CohortRule:
    """Articles entering the ranking with exactly ``entry_score`` points no
    later than ``max_entry_age_minutes`` after submission."""

    entry_score: int = 3
    max_entry_age_minutes: float = 30.0


@dataclass
class PageSummary:
    page: int
    count: int
    median: float
    mean: float
    final_scores: list


def entry_states(observations: Sequence[Observation]) -> dict:
    """First observation of each article, i.e. its entry into the ranking."""
    first: dict = {}
    for o in observations:
        cur = first.get(o.article_id)
        if cur is None or o.bucket < cur.bucket:
            first[o.article_id] = o
    return first


def initial_position_analysis(
    observations: Sequence[Observation],
    final_scores: Mapping,
    cohort: CohortRule = CohortRule(),
    page_size: int = 30,
) -> list[PageSummary]:
    """Final score of a like-for-like cohort grouped by the page it entered on."""
    groups: dict[int, list] = {}
    for aid, o in entry_states(observations).items():
        if o.displayed_score != cohort.entry_score:
            continue
        if o.age_hours * 60.0 > cohort.max_entry_age_minutes + 1e-9:
            continue
        if aid not in final_scores:
            continue
        page = (o.position - 1) // page_size + 1
        groups.setdefault(page, []).append(final_scores[aid])
    if not groups:
        raise ValueError("no article matches the cohort rule")
    return [
        PageSummary(page=p, count=len(v), median=float(statistics.median(v)), mean=float(np.mean(v)), final_scores=v)
        for p, v in sorted(groups.items())
    ]


def quality_popularity_report(
    report: QualityReport, final_scores: Mapping, view_estimates: Mapping
) -> tuple[float, float]:
    """Spearman of quality against final score and against estimated views."""
    ids = [a for a in report.quality if a in final_scores and a in view_estimates]
    if not ids:
        raise ValueError("no articles in common")
    q = [report.quality[a] for a in ids]
    return (
        spearman(q, [final_scores[a] for a in ids]),
        spearman(q, [view_estimates[a] for a in ids]),
    )


def topk_overlap(quality: Mapping, popularity: Mapping, k_percent: float) -> float:
    """Share of the top ``k_percent`` by quality that is also top by popularity."""
    ids = sorted(a for a in quality if a in popularity)
    m = math.floor(k_percent * len(ids) + 1e-9)
    if m < 1:
        raise ValueError(f"k_percent={k_percent} selects no articles out of {len(ids)}")
    top_q = sorted(ids, key=lambda a: (-quality[a], a))[:m]
    top_p = sorted(ids, key=lambda a: (-popularity[a], a))[:m]
    return len(set(top_q) & set(top_p)) / m


def normalized_growth_rate(rates_by_day: Mapping[Hashable, Mapping]) -> dict:
    """Scale each day's rates to ``(g - mean) / (max - min)``."""
    out = {}
    for day, rates in rates_by_day.items():
        vals = np.array(list(rates.values()), dtype=float)
        spread = vals.max() - vals.min() if vals.size else 0.0
        if vals.size < 2 or spread == 0:
            raise ValueError(f"day {day!r} needs at least two distinct rates")
        mean = vals.mean()
        for a, g in rates.items():
            out[a] = (g - mean) / spread
    return out


def sign_test(wins: int, losses: int) -> float:
    """One-sided binomial sign test p-value for ``wins`` out of ``wins + losses``."""
    n = wins + losses
    if n == 0:
        return 1.0
    return float(binomtest(wins, n, 0.5, alternative="greater").pvalue)
