"""Quality scores, position-bias curves and view estimates from a fit."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .estimator import FitResult, Observation, predict_rate

# reported qualities are rounded so that the q/p identification shift, which
# perturbs q only in the last few bits, cannot change the report
QUALITY_DECIMALS = 12
NON_MONOTONE_THRESHOLD = 0.05


class SiteMode(enum.Enum):
    HN = "hn"
    REDDIT = "reddit"


@dataclass
class VoteRatios:
    r_up: dict
    r_down: dict


@dataclass
class QualityReport:
    quality: dict
    quantile: dict
    mode: SiteMode

    def rows(self) -> list[tuple]:
        return [(a, self.quality[a], self.quantile[a]) for a in self.quality]


@dataclass
class PositionCurve:
    positions: list[int]
    rates: list[float]
    non_monotone: bool

    def __iter__(self):
        return iter(zip(self.positions, self.rates))

    def __len__(self):
        return len(self.positions)


def compute_vote_ratios(observations: Iterable[Observation]) -> VoteRatios:
    """Share of up- and downvotes over all of each article's observations."""
    ups: dict = {}
    totals: dict = {}
    for o in observations:
        ups[o.article_id] = ups.get(o.article_id, 0) + o.votes_up
        totals[o.article_id] = totals.get(o.article_id, 0) + o.votes
    zero = [a for a, t in totals.items() if t == 0]
    if zero:
        raise ValueError(f"articles without votes have no vote ratio: {zero[:5]}")
    r_up = {a: ups[a] / totals[a] for a in totals}
    return VoteRatios(r_up=r_up, r_down={a: 1.0 - r for a, r in r_up.items()})


def _quantiles(values: Mapping) -> dict:
    """Fraction of the other articles with strictly smaller value."""
    keys = list(values)
    arr = np.array([values[k] for k in keys], dtype=float)
    n = len(arr)
    if n == 1:
        return {keys[0]: 0.0}
    smaller = np.searchsorted(np.sort(arr), arr, side="left")
    return {k: float(s) / (n - 1) for k, s in zip(keys, smaller)}


def quality_scores(fit: FitResult, ratios: VoteRatios | None = None, mode: SiteMode = SiteMode.HN) -> QualityReport:
    """Normalized quality, 1 for the best article.

    HN: ``exp(q_i) / max_j exp(q_j)``. Reddit multiplies each term by the net
    vote share ``r_up - r_down``, so articles with more downvotes than upvotes
    get a nonpositive quality.
    """
    ids = list(fit.q)
    q = np.array([fit.q[a] for a in ids])
    if mode is SiteMode.REDDIT:
        if ratios is None:
            raise ValueError("Reddit quality needs vote ratios")
        net = np.array([ratios.r_up[a] - ratios.r_down[a] for a in ids])
    else:
        net = np.ones(len(ids))
    # exp(q - max q) keeps the shift invariance exact up to rounding
    raw = np.exp(q - q.max()) * net
    top = raw.max()
    if top <= 0:
        raise ValueError("no article has positive raw quality")
    quality = {a: round(float(v / top), QUALITY_DECIMALS) for a, v in zip(ids, raw)}
    return QualityReport(quality=quality, quantile=_quantiles(quality), mode=mode)


def position_bias_curve(fit: FitResult) -> PositionCurve:
    """Relative view rate per position, scaled so the largest is 1.

    ``non_monotone`` is set when the rate rises by more than 5% from one
    fitted position to the next, the symptom of position effects leaking into
    the score term.
    """
    positions = sorted(fit.p)
    p = np.array([fit.p[j] for j in positions])
    rates = np.exp(p - p.max())
    jumps = rates[1:] > rates[:-1] * (1 + NON_MONOTONE_THRESHOLD)
    return PositionCurve(positions=positions, rates=rates.tolist(), non_monotone=bool(jumps.any()))


def total_views(fit: FitResult, trajectory: Iterable[int]) -> float:
    """Sum of ``exp(p)`` over the positions an article occupied."""
    total = 0.0
    for j in trajectory:
        if j not in fit.p:
            raise KeyError(f"position {j} not in fit")
        total += math.exp(fit.p[j])
    return total


def view_estimates(fit: FitResult, observations: Iterable[Observation]) -> dict:
    """:func:`total_views` for every fitted article, from its observed positions."""
    trajectories: dict = {}
    for o in observations:
        if o.article_id in fit.q and o.position in fit.p:
            trajectories.setdefault(o.article_id, []).append(o.position)
    return {a: total_views(fit, t) for a, t in trajectories.items()}


def predicted_score_growth(
    fit: FitResult,
    ratios: VoteRatios | None,
    article_id: Hashable,
    position: int,
    age_hours: float = 0.0,
    displayed_score: float = 1,
    mode: SiteMode = SiteMode.REDDIT,
) -> float:
    v_hat = predict_rate(fit, article_id, position, age_hours, displayed_score)
    if mode is SiteMode.HN:
        return v_hat
    return v_hat * (ratios.r_up[article_id] - ratios.r_down[article_id])


def normalized_log_score(final_scores: Mapping) -> dict:
    """``log(score) / max log(score)``; all articles map to 1 if every score is 1."""
    bad = [a for a, s in final_scores.items() if s < 1]
    if bad:
        raise ValueError(f"scores must be >= 1: {bad[:5]}")
    logs = {a: math.log(s) for a, s in final_scores.items()}
    top = max(logs.values())
    if top == 0:
        return {a: 1.0 for a in logs}
    return {a: v / top for a, v in logs.items()}


def quantile_ranks(values: Mapping) -> dict:
    return _quantiles(values)
