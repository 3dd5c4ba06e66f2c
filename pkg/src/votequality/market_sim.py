"""Synthetic voting data with known ground truth.

Users follow the examination hypothesis: the item at position ``j`` is looked
at with probability ``view_curve[j - 1]`` regardless of which item sits
there, and a looked-at item is voted on (or downloaded) with an item-specific
probability. Two drivers are provided:

* :func:`run_aggregator_sim` -- a Reddit/Hacker News style list re-ranked once
  per time bucket by the hot or top score.
* :func:`run_musiclab_sim` -- the 9-world MusicLab design: social worlds
  ordered by download count plus one randomly ordered control world.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Iterator

import numpy as np

from .estimator import Observation
from .ranking import RankingRule, RankMode, rank_arrays, score_arrays

DEFAULT_START = datetime(2014, 5, 26, 6, 0, tzinfo=timezone(timedelta(hours=-4)))


class SimMode(enum.Enum):
    AGGREGATOR = "aggregator"
    MUSICLAB = "musiclab"


@dataclass
class GroundTruth:
    """Parameters the simulator draws behaviour from.

    ``view_curve[k]`` is the examination probability of position ``k + 1``;
    positions past the end of the curve are never examined. ``age_decay`` is
    the per-hour change in log vote propensity.
    """

    qualities: dict
    view_curve: np.ndarray
    social_weight: float = 0.0
    downvote_prob: dict = field(default_factory=dict)
    age_decay: float = 0.0

    def __post_init__(self):
        self.view_curve = np.asarray(self.view_curve, dtype=float)
        if np.any(self.view_curve < 0) or np.any(self.view_curve > 1):
            raise ValueError("view probabilities must lie in [0, 1]")
        if np.any(np.diff(self.view_curve) > 0):
            raise ValueError("view_curve must be non-increasing in position")
        if any(q <= 0 for q in self.qualities.values()):
            raise ValueError("qualities must be positive")
        if any(not 0 <= d < 1 for d in self.downvote_prob.values()):
            raise ValueError("downvote probabilities must lie in [0, 1)")
        if self.age_decay > 0:
            raise ValueError("age_decay must be <= 0")

    def view(self, n_positions: int) -> np.ndarray:
        out = np.zeros(n_positions)
        k = min(n_positions, len(self.view_curve))
        out[:k] = self.view_curve[:k]
        return out

    def to_dict(self, seed: int | None = None) -> dict:
        return {
            "qualities": dict(self.qualities),
            "view_curve": self.view_curve.tolist(),
            "social_weight": self.social_weight,
            "age_decay": self.age_decay,
            "downvote_prob": dict(self.downvote_prob),
            "seed": seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GroundTruth":
        return cls(
            qualities=data["qualities"],
            view_curve=data["view_curve"],
            social_weight=data.get("social_weight", 0.0),
            downvote_prob=data.get("downvote_prob", {}),
            age_decay=data.get("age_decay", 0.0),
        )


@dataclass
class SimConfig:
    """Simulation settings.

    One tick is one observation bucket of ``bucket_len_minutes``. In
    aggregator mode ``new_queue_view`` is the chance that a user looks at each
    young article not yet on the ranked list (Hacker News' "new" page); with
    the default of 0 off-list articles get no votes. In MusicLab mode
    ``n_users`` users in total are spread across the worlds.
    """

    mode: SimMode = SimMode.AGGREGATOR
    n_articles: int = 100
    n_ticks: int = 500
    users_per_tick: int = 100
    bucket_len_minutes: int = 10
    rule: RankingRule = field(default_factory=RankingRule)
    n_social_worlds: int = 8
    include_random_world: bool = True
    n_users: int = 0
    seed: int = 0
    arrival_schedule: dict | None = None
    initial_upvotes: int = 1
    new_queue_view: float = 0.0
    new_queue_hours: float = 2.0
    record_events: bool = False

    def __post_init__(self):
        if self.n_articles < 1 or self.n_ticks < 1 or self.users_per_tick < 1:
            raise ValueError("n_articles, n_ticks and users_per_tick must be >= 1")
        if self.bucket_len_minutes <= 0:
            raise ValueError("bucket_len_minutes must be positive")
        if not 0 <= self.new_queue_view <= 1:
            raise ValueError("new_queue_view must lie in [0, 1]")
        if self.rule.mode is RankMode.HN_TOP and self.initial_upvotes < 1:
            raise ValueError("Hacker News articles start with at least one upvote")

    @property
    def total_users(self) -> int:
        return self.n_users or self.n_ticks * self.users_per_tick

    def article_ids(self) -> list[str]:
        width = max(4, len(str(self.n_articles - 1)))
        return [f"a{k:0{width}d}" for k in range(self.n_articles)]


def exponential_view_curve(n_positions: int, scale: float, top: float = 1.0) -> np.ndarray:
    """``top * exp(-(j - 1) / scale)`` for positions ``j = 1..n``."""
    return top * np.exp(-np.arange(n_positions) / scale)


def spread_arrivals(ids: list, n_ticks: int, rng: np.random.Generator, last_tick: int | None = None) -> dict:
    """Assign each id a uniformly random arrival tick in ``[0, last_tick]``."""
    last_tick = n_ticks - 1 if last_tick is None else min(last_tick, n_ticks - 1)
    ticks = rng.integers(0, last_tick + 1, size=len(ids))
    schedule: dict = {}
    for aid, t in zip(ids, ticks.tolist()):
        schedule.setdefault(t, []).append(aid)
    return schedule


def random_truth(
    ids: list,
    rng: np.random.Generator,
    view_curve: np.ndarray,
    quality_range: tuple[float, float] = (0.02, 0.2),
    social_weight: float = 0.0,
    age_decay: float = 0.0,
    downvote_range: tuple[float, float] | None = None,
) -> GroundTruth:
    """Log-uniform qualities over ``quality_range``."""
    lo, hi = np.log(quality_range[0]), np.log(quality_range[1])
    q = np.exp(rng.uniform(lo, hi, size=len(ids)))
    down = {}
    if downvote_range is not None:
        down = dict(zip(ids, rng.uniform(*downvote_range, size=len(ids)).tolist()))
    return GroundTruth(
        qualities=dict(zip(ids, q.tolist())),
        view_curve=view_curve,
        social_weight=social_weight,
        downvote_prob=down,
        age_decay=age_decay,
    )


@dataclass
class WorldState:
    """Mutable aggregator state, indexed by article slot."""

    ids: list
    upvotes: np.ndarray
    downvotes: np.ndarray
    arrival_tick: np.ndarray  # -1 until the article arrives
    tick: int = 0
    ranking: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))

    @classmethod
    def empty(cls, ids: list) -> "WorldState":
        n = len(ids)
        return cls(
            ids=list(ids),
            upvotes=np.zeros(n, dtype=np.int64),
            downvotes=np.zeros(n, dtype=np.int64),
            arrival_tick=np.full(n, -1, dtype=np.int64),
        )

    @property
    def arrived(self) -> np.ndarray:
        return np.flatnonzero(self.arrival_tick >= 0)

    def displayed_scores(self, rule: RankingRule) -> np.ndarray:
        if rule.mode is RankMode.HN_TOP:
            return self.upvotes.copy()
        return self.upvotes - self.downvotes

    def age_hours(self, config: SimConfig) -> np.ndarray:
        return (self.tick - self.arrival_tick) * config.bucket_len_minutes / 60.0

    def rerank(self, config: SimConfig) -> None:
        live = self.arrived
        now = self.tick * config.bucket_len_minutes
        submit = self.arrival_tick[live] * config.bucket_len_minutes
        scores = score_arrays(self.upvotes[live], self.downvotes[live], now - submit, config.rule)
        self.ranking = live[rank_arrays(scores, submit, config.rule)]


@dataclass
class TickEvents:
    examined: np.ndarray  # (users, positions) examination mask
    upvotes: np.ndarray  # per article slot, ranked list only
    downvotes: np.ndarray
    offlist_upvotes: np.ndarray
    offlist_downvotes: np.ndarray
    trace: list | None = None


def _vote_probability(state: WorldState, slots: np.ndarray, truth_q: np.ndarray, truth: GroundTruth, config: SimConfig):
    age = state.age_hours(config)[slots]
    shown = np.maximum(state.displayed_scores(config.rule)[slots], 1)
    prob = truth_q[slots] * np.exp(truth.age_decay * age + truth.social_weight * np.log(shown))
    if np.any(prob > 1):
        worst = slots[np.argmax(prob)]
        raise ValueError(
            f"vote probability {prob.max():.3g} > 1 for article {state.ids[worst]!r}; rescale qualities"
        )
    return prob


def simulate_tick(
    state: WorldState,
    truth: GroundTruth,
    config: SimConfig,
    rng: np.random.Generator,
    _arrays: tuple | None = None,
) -> TickEvents:
    """Simulate one bucket of user visits on the current ranking.

    Updates the tallies in ``state``, advances its clock by one tick and
    re-ranks.
    """
    q, down_p = _arrays if _arrays is not None else _truth_arrays(state.ids, truth)
    n = len(state.ids)
    users = config.users_per_tick
    order = state.ranking
    k = len(order)
    reddit = config.rule.mode is RankMode.REDDIT_HOT

    # examination draws come first and depend only on the rng and position
    examined = rng.random((users, k)) < truth.view(k)
    draws = rng.random((users, k))
    voted = examined & (draws < _vote_probability(state, order, q, truth, config))
    down = np.zeros_like(voted)
    if reddit:
        down = voted & (rng.random((users, k)) < down_p[order])
    up_counts = np.zeros(n, dtype=np.int64)
    down_counts = np.zeros(n, dtype=np.int64)
    up_counts[order] = (voted & ~down).sum(axis=0)
    down_counts[order] = down.sum(axis=0)

    off_up = np.zeros(n, dtype=np.int64)
    off_down = np.zeros(n, dtype=np.int64)
    if config.new_queue_view > 0:
        on_list = np.zeros(n, dtype=bool)
        on_list[order] = True
        young = state.age_hours(config) < config.new_queue_hours
        off = np.flatnonzero((state.arrival_tick >= 0) & ~on_list & young)
        if off.size:
            ex = rng.random((users, off.size)) < config.new_queue_view
            v = ex & (rng.random((users, off.size)) < _vote_probability(state, off, q, truth, config))
            d = np.zeros_like(v)
            if reddit:
                d = v & (rng.random((users, off.size)) < down_p[off])
            off_up[off] = (v & ~d).sum(axis=0)
            off_down[off] = d.sum(axis=0)

    trace = None
    if config.record_events:
        trace = []
        for u, col in zip(*np.nonzero(voted)):
            kind = "down" if down[u, col] else "up"
            trace.append((state.tick, int(u), state.ids[order[col]], int(col) + 1, kind))

    state.upvotes += up_counts + off_up
    state.downvotes += down_counts + off_down
    state.tick += 1
    state.rerank(config)
    return TickEvents(examined, up_counts, down_counts, off_up, off_down, trace)


def _truth_arrays(ids: list, truth: GroundTruth) -> tuple[np.ndarray, np.ndarray]:
    q = np.array([truth.qualities[a] for a in ids], dtype=float)
    down = np.array([truth.downvote_prob.get(a, 0.0) for a in ids], dtype=float)
    return q, down


@dataclass
class ObservationLog:
    observations: list
    truth: GroundTruth
    final_scores: dict
    final_upvotes: dict
    final_downvotes: dict
    arrival_tick: dict
    offlist_votes: dict
    config: SimConfig
    events: list | None = None

    def observations_by_article(self) -> dict:
        out: dict = {}
        for o in self.observations:
            out.setdefault(o.article_id, []).append(o)
        return out

    def timestamp(self, tick: int) -> datetime:
        return DEFAULT_START + timedelta(minutes=tick * self.config.bucket_len_minutes)


def run_aggregator_sim(config: SimConfig, truth: GroundTruth) -> ObservationLog:
    """Run ``config.n_ticks`` buckets and collect one observation per ranked
    article per bucket (position, score and age at bucket start; votes during
    the bucket)."""
    if config.mode is not SimMode.AGGREGATOR:
        raise ValueError("config.mode must be AGGREGATOR")
    rng = np.random.default_rng(config.seed)
    ids = config.article_ids()
    missing = [a for a in ids if a not in truth.qualities]
    if missing:
        raise ValueError(f"no ground-truth quality for {missing[:3]}")
    schedule = config.arrival_schedule
    if schedule is None:
        schedule = {0: list(ids)}
    slot = {a: k for k, a in enumerate(ids)}
    arrays = _truth_arrays(ids, truth)
    reddit = config.rule.mode is RankMode.REDDIT_HOT

    state = WorldState.empty(ids)
    off_up = np.zeros(len(ids), dtype=np.int64)
    off_down = np.zeros(len(ids), dtype=np.int64)
    observations: list[Observation] = []
    events: list | None = [] if config.record_events else None
    for tick in range(config.n_ticks):
        state.tick = tick
        for aid in schedule.get(tick, ()):
            k = slot[aid]
            if state.arrival_tick[k] >= 0:
                raise ValueError(f"article {aid!r} scheduled twice")
            state.arrival_tick[k] = tick
            state.upvotes[k] = config.initial_upvotes
        state.rerank(config)
        order = state.ranking
        shown = state.displayed_scores(config.rule)
        age = state.age_hours(config)
        ev = simulate_tick(state, truth, config, rng, arrays)
        for pos, k in enumerate(order.tolist(), start=1):
            observations.append(
                Observation(
                    bucket=tick,
                    article_id=ids[k],
                    position=pos,
                    votes_up=int(ev.upvotes[k]),
                    votes_down=int(ev.downvotes[k]) if reddit else 0,
                    displayed_score=int(shown[k]),
                    age_hours=float(age[k]),
                )
            )
        if events is not None:
            events.extend(ev.trace)
        off_up += ev.offlist_upvotes
        off_down += ev.offlist_downvotes

    arrived = state.arrived
    scores = state.displayed_scores(config.rule)
    return ObservationLog(
        observations=observations,
        truth=truth,
        final_scores={ids[k]: int(scores[k]) for k in arrived},
        final_upvotes={ids[k]: int(state.upvotes[k]) for k in arrived},
        final_downvotes={ids[k]: int(state.downvotes[k]) for k in arrived},
        arrival_tick={ids[k]: int(state.arrival_tick[k]) for k in arrived},
        offlist_votes={ids[k]: (int(off_up[k]), int(off_down[k])) for k in arrived},
        config=config,
        events=events,
    )


@dataclass
class MusicLabLog:
    """Per-user exposure records, one row per (user, item shown).

    Worlds ``1..n_social_worlds`` are ordered by download count; world
    ``n_social_worlds + 1`` (when present) is the random control world.
    ``downloads_before`` is the item's download count in that world when the
    user arrived.
    """

    world: np.ndarray
    user: np.ndarray
    item: np.ndarray
    position: np.ndarray
    downloaded: np.ndarray
    downloads_before: np.ndarray
    item_ids: list
    n_social_worlds: int
    include_random_world: bool
    truth: GroundTruth

    @property
    def random_world(self) -> int | None:
        return self.n_social_worlds + 1 if self.include_random_world else None

    @property
    def worlds(self) -> list[int]:
        n = self.n_social_worlds + (1 if self.include_random_world else 0)
        return list(range(1, n + 1))

    def __len__(self) -> int:
        return len(self.user)

    def records(self) -> Iterator[dict]:
        for k in range(len(self)):
            yield {
                "world": int(self.world[k]),
                "user": int(self.user[k]),
                "item": self.item_ids[self.item[k]],
                "pos": int(self.position[k]),
                "downloaded": int(self.downloaded[k]),
                "downloads_before": int(self.downloads_before[k]),
            }

    def download_counts(self, world: int) -> dict:
        mask = self.world == world
        counts = np.bincount(self.item[mask], weights=self.downloaded[mask], minlength=len(self.item_ids))
        return {aid: int(c) for aid, c in zip(self.item_ids, counts)}

    def to_observations(self, worlds: list[int] | None = None) -> list[Observation]:
        """One observation per exposure: bucket is the user, votes the 0/1
        download, displayed score the prior download count."""
        worlds = self.worlds if worlds is None else worlds
        mask = np.isin(self.world, worlds)
        ids = self.item_ids
        return [
            Observation(bucket=int(u), article_id=ids[i], position=int(j), votes_up=int(d), displayed_score=int(D))
            for u, i, j, d, D in zip(
                self.user[mask], self.item[mask], self.position[mask], self.downloaded[mask], self.downloads_before[mask]
            )
        ]

    def exposures(self, world: int) -> list[tuple[int, str, int]]:
        mask = self.world == world
        return [
            (int(u), self.item_ids[i], int(j))
            for u, i, j in zip(self.user[mask], self.item[mask], self.position[mask])
        ]


def run_musiclab_sim(config: SimConfig, truth: GroundTruth) -> MusicLabLog:
    """Simulate arriving users, each assigned uniformly to one world.

    Social worlds list items by current within-world downloads (ties by item
    order) and add ``social_weight * downloads`` to the log download
    propensity. The random world shows each user an independent random
    order with no social term.
    """
    if config.mode is not SimMode.MUSICLAB:
        raise ValueError("config.mode must be MUSICLAB")
    if config.n_social_worlds < 0 or (config.n_social_worlds == 0 and not config.include_random_world):
        raise ValueError("need at least one world")
    rng = np.random.default_rng(config.seed)
    ids = config.article_ids()
    q = np.array([truth.qualities[a] for a in ids], dtype=float)
    n_items = len(ids)
    n_worlds = config.n_social_worlds + (1 if config.include_random_world else 0)
    random_world = config.n_social_worlds + 1 if config.include_random_world else None
    view = truth.view(n_items)
    downloads = np.zeros((n_worlds + 1, n_items), dtype=np.int64)
    item_index = np.arange(n_items)
    positions = np.arange(1, n_items + 1)

    n_users = config.total_users
    assigned = rng.integers(1, n_worlds + 1, size=n_users)
    world = np.repeat(assigned, n_items)
    user = np.repeat(np.arange(n_users), n_items)
    item = np.empty(n_users * n_items, dtype=np.intp)
    got = np.empty(n_users * n_items, dtype=np.int8)
    before = np.empty(n_users * n_items, dtype=np.int64)
    for u in range(n_users):
        w = assigned[u]
        counts = downloads[w]
        if w == random_world:
            order = rng.permutation(n_items)
            prob = q[order]
        else:
            order = np.lexsort((item_index, -counts))
            prob = q[order] * np.exp(truth.social_weight * counts[order])
        if np.any(prob > 1):
            raise ValueError(f"download probability {prob.max():.3g} > 1; rescale qualities")
        examined = rng.random(n_items) < view
        hit = examined & (rng.random(n_items) < prob)
        sl = slice(u * n_items, (u + 1) * n_items)
        item[sl] = order
        got[sl] = hit
        before[sl] = counts[order]
        counts[order[hit]] += 1

    return MusicLabLog(
        world=world,
        user=user,
        item=item,
        position=np.tile(positions, n_users),
        downloaded=got,
        downloads_before=before,
        item_ids=ids,
        n_social_worlds=config.n_social_worlds,
        include_random_world=config.include_random_world,
        truth=truth,
    )


def fuzz_votes(u: int, d: int, f: int) -> tuple[int, int]:
    """Inflate both counts by ``f``; the score ``u - d`` is unchanged."""
    if u < 0 or d < 0 or f < 0:
        raise ValueError("counts must be nonnegative")
    return u + f, d + f


def to_raw_observations(log: ObservationLog, start: datetime = DEFAULT_START) -> list:
    """Timestamped records in the ingest JSONL schema."""
    from .ingest import RawObservation

    step = timedelta(minutes=log.config.bucket_len_minutes)
    return [
        RawObservation(
            timestamp=start + o.bucket * step,
            article_id=o.article_id,
            position=o.position,
            votes_up=o.votes_up,
            votes_down=o.votes_down,
            displayed_score=o.displayed_score,
            submit_time=start + log.arrival_tick[o.article_id] * step,
        )
        for o in log.observations
    ]
