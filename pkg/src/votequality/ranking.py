"""Reddit "hot" and Hacker News "top" ranking rules."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

REDDIT_AGE_SCALE = 750.0  # minutes
HN_VOTE_EXPONENT = 0.8
HN_AGE_EXPONENT = 1.8
HN_AGE_OFFSET = 2.0  # hours


class RankMode(enum.Enum):
    REDDIT_HOT = "reddit"
    HN_TOP = "hn"


@dataclass
class ArticleState:
    """Live vote tallies of one article.

    ``submit_time`` is in minutes on the same clock as the ``now`` passed to
    :func:`rank_articles`.
    """

    article_id: Hashable
    upvotes: int = 0
    downvotes: int = 0
    submit_time: float = 0.0
    penalty: float = 1.0

    def __post_init__(self):
        if self.upvotes < 0 or self.downvotes < 0:
            raise ValueError(f"negative vote count for {self.article_id!r}")
        if self.penalty <= 0:
            raise ValueError(f"penalty must be positive, got {self.penalty}")

    @property
    def score(self) -> int:
        return self.upvotes - self.downvotes


@dataclass(frozen=True)
class RankingRule:
    mode: RankMode = RankMode.REDDIT_HOT
    hn_threshold: float = 0.0

    def __post_init__(self):
        if self.hn_threshold < 0:
            raise ValueError("hn_threshold must be nonnegative")


def reddit_hot_score(u: int, d: int, age_minutes: float) -> float:
    """Reddit hot score ``log(u - d) - age/750``.

    When ``u - d < 1`` the log term is clamped to 0, so such articles are
    still ordered by age.
    """
    if u < 0 or d < 0 or age_minutes < 0:
        raise ValueError("votes and age must be nonnegative")
    net = u - d
    log_term = math.log(net) if net >= 1 else 0.0
    return log_term - age_minutes / REDDIT_AGE_SCALE


def hn_top_score(u: int, age_hours: float, penalty: float = 1.0) -> float:
    if u < 1:
        raise ValueError("a Hacker News article has at least one upvote (its submitter's)")
    if age_hours < 0:
        raise ValueError("age must be nonnegative")
    if penalty <= 0:
        raise ValueError("penalty must be positive")
    return (u - 1) ** HN_VOTE_EXPONENT / (age_hours + HN_AGE_OFFSET) ** HN_AGE_EXPONENT * penalty


def article_score(state: ArticleState, rule: RankingRule, now: float) -> float:
    age_minutes = now - state.submit_time
    if age_minutes < 0:
        raise ValueError(f"article {state.article_id!r} submitted after now")
    if rule.mode is RankMode.REDDIT_HOT:
        return reddit_hot_score(state.upvotes, state.downvotes, age_minutes)
    return hn_top_score(state.upvotes, age_minutes / 60.0, state.penalty)


def rank_articles(
    states: Sequence[ArticleState], rule: RankingRule, now: float
) -> list[tuple[Hashable, int]]:
    """Order articles by descending score and assign 1-based positions.

    Ties go to the earlier submission, then to the smaller article id. In HN
    mode articles scoring below ``rule.hn_threshold`` are left out.
    """
    scored = []
    for state in states:
        s = article_score(state, rule, now)
        if rule.mode is RankMode.HN_TOP and s < rule.hn_threshold:
            continue
        scored.append((-s, state.submit_time, state.article_id))
    scored.sort()
    return [(aid, pos) for pos, (_, _, aid) in enumerate(scored, start=1)]


def score_arrays(
    upvotes: np.ndarray,
    downvotes: np.ndarray,
    age_minutes: np.ndarray,
    rule: RankingRule,
    penalty: np.ndarray | None = None,
) -> np.ndarray:
    """Vectorized :func:`reddit_hot_score` / :func:`hn_top_score`."""
    upvotes = np.asarray(upvotes, dtype=float)
    age_minutes = np.asarray(age_minutes, dtype=float)
    if rule.mode is RankMode.REDDIT_HOT:
        net = upvotes - np.asarray(downvotes, dtype=float)
        log_term = np.log(np.maximum(net, 1.0))
        return log_term - age_minutes / REDDIT_AGE_SCALE
    if np.any(upvotes < 1):
        raise ValueError("a Hacker News article has at least one upvote")
    top = (upvotes - 1.0) ** HN_VOTE_EXPONENT / (age_minutes / 60.0 + HN_AGE_OFFSET) ** HN_AGE_EXPONENT
    if penalty is not None:
        top = top * penalty
    return top


def rank_arrays(scores: np.ndarray, submit_time: np.ndarray, rule: RankingRule) -> np.ndarray:
    """Indices of ranked items, best first.

    Same ordering as :func:`rank_articles` when item ids sort like their
    array indices.
    """
    scores = np.asarray(scores, dtype=float)
    idx = np.arange(len(scores))
    order = np.lexsort((idx, np.asarray(submit_time, dtype=float), -scores))
    if rule.mode is RankMode.HN_TOP:
        order = order[scores[order] >= rule.hn_threshold]
    return order
