"""Observation files, inclusion filters and Reddit vote de-fuzzing.

JSONL schema, one snapshot per line::

    {"t": "2014-05-27T10:00:00-04:00", "id": "abc", "pos": 7,
     "up": 3, "down": 1, "score": 41, "submitted": "2014-05-27T08:12:00-04:00"}

``up``/``down`` are the votes received between this snapshot and the next
one; ``score`` is the score displayed at ``t``. Timestamps must carry a UTC
offset.
"""

from __future__ import annotations

import enum
import json
import math
import statistics
from dataclasses import dataclass, field
from datetime import datetime, time
from typing import IO, Iterable, Sequence
from zoneinfo import ZoneInfo

import numpy as np

from .estimator import Observation


class IngestError(ValueError):
    """Malformed observation input; ``errors`` holds ``(line, message)`` pairs."""

    def __init__(self, errors: list[tuple[int, str]]):
        self.errors = errors
        shown = "; ".join(f"line {n}: {msg}" for n, msg in errors[:10])
        more = f" (+{len(errors) - 10} more)" if len(errors) > 10 else ""
        super().__init__(shown + more)


class Site(enum.Enum):
    HN = "hn"
    REDDIT = "reddit"


@dataclass(frozen=True)
class RawObservation:
    timestamp: datetime
    article_id: str
    position: int
    votes_up: int
    votes_down: int
    displayed_score: int
    submit_time: datetime

    def to_record(self) -> dict:
        return {
            "t": self.timestamp.isoformat(),
            "id": self.article_id,
            "pos": self.position,
            "up": self.votes_up,
            "down": self.votes_down,
            "score": self.displayed_score,
            "submitted": self.submit_time.isoformat(),
        }


_FIELDS = {"t": str, "id": str, "pos": int, "up": int, "down": int, "score": int, "submitted": str}


def _parse_time(value: str) -> datetime:
    ts = datetime.fromisoformat(value.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        raise ValueError(f"timestamp {value!r} has no UTC offset")
    return ts


def _parse_record(rec: dict, site: Site) -> RawObservation:
    if not isinstance(rec, dict):
        raise ValueError("record is not a JSON object")
    missing = [k for k in _FIELDS if k not in rec]
    if missing:
        raise ValueError(f"missing fields {missing}")
    for key, typ in _FIELDS.items():
        val = rec[key]
        if typ is int and (isinstance(val, bool) or not isinstance(val, int)):
            raise ValueError(f"{key!r} must be an integer")
        if typ is str and not isinstance(val, str):
            raise ValueError(f"{key!r} must be a string")
    if rec["pos"] < 1:
        raise ValueError("positions are 1-based")
    if rec["up"] < 0 or rec["down"] < 0:
        raise ValueError("vote counts must be nonnegative")
    if site is Site.HN and rec["down"] != 0:
        raise ValueError("Hacker News records cannot have downvotes")
    t, sub = _parse_time(rec["t"]), _parse_time(rec["submitted"])
    if t < sub:
        raise ValueError("observed before submission")
    return RawObservation(t, rec["id"], rec["pos"], rec["up"], rec["down"], rec["score"], sub)


def parse_observations(stream: IO[str] | Iterable[str], site: Site = Site.REDDIT) -> list[RawObservation]:
    """Parse and validate a JSONL stream; all bad lines are reported together."""
    out, errors = [], []
    seen: set = set()
    for lineno, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            raw = _parse_record(json.loads(line), site)
        except (ValueError, TypeError) as exc:
            errors.append((lineno, str(exc)))
            continue
        key = (raw.timestamp, raw.article_id)
        if key in seen:
            errors.append((lineno, f"duplicate snapshot of {raw.article_id!r} at {raw.timestamp.isoformat()}"))
            continue
        seen.add(key)
        out.append(raw)
    if errors:
        raise IngestError(errors)
    return out


def final_scores(observations: Iterable[Observation]) -> dict:
    """Score after each article's last observed bucket (displayed score plus
    that bucket's net votes)."""
    last: dict = {}
    for o in observations:
        cur = last.get(o.article_id)
        if cur is None or o.bucket > cur.bucket:
            last[o.article_id] = o
    return {a: o.displayed_score + o.votes_up - o.votes_down for a, o in last.items()}


def dump_observations(records: Iterable[RawObservation], stream: IO[str]) -> int:
    n = 0
    for r in records:
        stream.write(json.dumps(r.to_record()) + "\n")
        n += 1
    return n


@dataclass
class FilterConfig:
    """Inclusion rules, applied in order: clock window, position range,
    maximum age, minimum observations per article.

    ``p_max="median"`` resolves to the median initial position of the input.
    """

    window_start: time = time(6, 0)
    window_end: time = time(20, 0)
    weekdays_only: bool = True
    p_min: int = 5
    p_max: int | str = "median"
    max_age_hours: float = 12.0
    min_observations: int = 5
    timezone: str = "America/New_York"
    bucket_minutes: int = 10

    def __post_init__(self):
        if not self.window_start < self.window_end:
            raise ValueError("window_start must precede window_end")
        if isinstance(self.p_max, str):
            if self.p_max != "median":
                raise ValueError("p_max must be an integer or 'median'")
        elif self.p_min >= self.p_max:
            raise ValueError("p_min must be below p_max")


@dataclass
class FilterResult:
    observations: list
    kept: list  # surviving RawObservation records
    report: dict = field(default_factory=dict)
    p_max: float | None = None


def initial_positions(raw: Iterable[RawObservation]) -> dict:
    first: dict = {}
    for r in raw:
        cur = first.get(r.article_id)
        if cur is None or r.timestamp < cur.timestamp:
            first[r.article_id] = r
    return {a: r.position for a, r in first.items()}


def bucket_index(ts: datetime, bucket_minutes: int) -> int:
    return math.floor(ts.timestamp() / (bucket_minutes * 60))


def to_observations(raw: Iterable[RawObservation], bucket_minutes: int = 10) -> list[Observation]:
    """Convert without filtering: timestamps to bucket indices, ages to hours."""
    return [
        Observation(
            bucket=bucket_index(r.timestamp, bucket_minutes),
            article_id=r.article_id,
            position=r.position,
            votes_up=r.votes_up,
            votes_down=r.votes_down,
            displayed_score=r.displayed_score,
            age_hours=(r.timestamp - r.submit_time).total_seconds() / 3600.0,
        )
        for r in raw
    ]


def apply_inclusion_filters(raw: Sequence[RawObservation], cfg: FilterConfig | None = None) -> FilterResult:
    cfg = cfg or FilterConfig()
    zone = ZoneInfo(cfg.timezone)
    report = {"time_window": 0, "position_range": 0, "max_age": 0, "min_observations": 0}

    def in_window(r: RawObservation) -> bool:
        local = r.timestamp.astimezone(zone)
        if cfg.weekdays_only and local.weekday() >= 5:
            return False
        return cfg.window_start <= local.time() <= cfg.window_end

    rows = [r for r in raw if in_window(r)]
    report["time_window"] = len(raw) - len(rows)

    if cfg.p_max == "median":
        firsts = list(initial_positions(raw).values())
        p_max = float(statistics.median(firsts)) if firsts else float("inf")
    else:
        p_max = float(cfg.p_max)
    n = len(rows)
    rows = [r for r in rows if cfg.p_min <= r.position <= p_max]
    report["position_range"] = n - len(rows)

    n = len(rows)
    rows = [r for r in rows if (r.timestamp - r.submit_time).total_seconds() <= cfg.max_age_hours * 3600]
    report["max_age"] = n - len(rows)

    counts: dict = {}
    for r in rows:
        counts[r.article_id] = counts.get(r.article_id, 0) + 1
    n = len(rows)
    rows = [r for r in rows if counts[r.article_id] >= cfg.min_observations]
    report["min_observations"] = n - len(rows)

    return FilterResult(
        observations=to_observations(rows, cfg.bucket_minutes), kept=rows, report=report, p_max=p_max
    )


def defuzz_exact(true_score: int, true_ratio: float) -> tuple[int, int]:
    """Recover (upvotes, downvotes) from a true score and upvote ratio.

    ``u = s * r / (2r - 1)`` and ``d = u - s``.
    """
    if not 0 <= true_ratio <= 1:
        raise ValueError("ratio must lie in [0, 1]")
    denom = 2.0 * true_ratio - 1.0
    if denom == 0:
        if true_score != 0:
            raise ValueError("ratio 0.5 is inconsistent with a nonzero score")
        raise ValueError("score 0 with ratio 0.5 does not determine the vote counts")
    u_exact = true_score * true_ratio / denom
    u = round(u_exact)
    if abs(u_exact - u) > 1e-6:
        raise ValueError(f"score {true_score} and ratio {true_ratio} give non-integral upvotes {u_exact}")
    d = u - true_score
    if u < 0 or d < 0:
        raise ValueError(f"score {true_score} and ratio {true_ratio} give negative counts")
    return int(u), int(d)


class KNNRegressor:
    """k-nearest-neighbour mean on standardized features.

    Any object with the same ``fit(X, y)`` / ``predict(X)`` methods can stand
    in for it in :func:`defuzz_regress`.
    """

    def __init__(self, k: int = 5):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k

    def fit(self, X, y) -> "KNNRegressor":
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or len(X) == 0:
            raise ValueError("empty training set")
        self.mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        self.scale_ = np.where(scale > 0, scale, 1.0)
        self.X_ = (X - self.mean_) / self.scale_
        self.y_ = np.asarray(y, dtype=float)
        return self

    def predict(self, X) -> np.ndarray:
        Z = (np.atleast_2d(np.asarray(X, dtype=float)) - self.mean_) / self.scale_
        k = min(self.k, len(self.X_))
        out = np.empty(len(Z))
        for row, z in enumerate(Z):
            dist = np.sum((self.X_ - z) ** 2, axis=1)
            # stable sort: equal distances resolve to the lower training index
            nearest = np.argsort(dist, kind="stable")[:k]
            out[row] = self.y_[nearest].mean()
        return out


def defuzz_features(u_obs, s_obs, r_obs) -> np.ndarray:
    return np.column_stack([np.asarray(u_obs, float), np.asarray(s_obs, float), np.asarray(r_obs, float)])


def defuzz_regress(training: Sequence[tuple], query, k: int = 5, regressor=None):
    """Estimate true upvotes from observed (upvotes, score, upvote ratio).

    ``training`` rows are ``(u_obs, s_obs, r_obs, u_true)``. ``query`` is one
    ``(u_obs, s_obs, r_obs)`` tuple (returns a float) or a sequence of them
    (returns an array).
    """
    if len(training) == 0:
        raise ValueError("empty training set")
    train = np.asarray(training, dtype=float)
    model = regressor if regressor is not None else KNNRegressor(k)
    model.fit(train[:, :3], train[:, 3])
    q = np.asarray(query, dtype=float)
    if q.ndim == 1:
        return float(model.predict(q[None, :])[0])
    return model.predict(q)


@dataclass
class FuzzBenchmark:
    features: np.ndarray  # u_obs, s_obs, r_obs
    u_true: np.ndarray


def synthetic_fuzz_dataset(
    n: int,
    seed: int,
    fuzz_fraction: float = 0.6,
    settle_hours: float = 48.0,
    activity_halflife_hours: float = 4.0,
) -> FuzzBenchmark:
    """Fuzzed snapshots paired with settled true upvote counts.

    Each article's final counts are drawn log-uniformly; the snapshot taken
    ``settle_hours`` after submission holds the share of votes cast by then
    (activity decays with the given half-life) and is fuzzed by a random
    amount up to ``fuzz_fraction`` of its total votes.
    """
    from .market_sim import fuzz_votes

    rng = np.random.default_rng(seed)
    total = np.exp(rng.uniform(np.log(5), np.log(5000), size=n))
    up_share = rng.uniform(0.55, 0.95, size=n)
    u_final = np.round(total * up_share).astype(int)
    d_final = np.round(total * (1 - up_share)).astype(int)
    settled = 1.0 - 0.5 ** (settle_hours / activity_halflife_hours)
    feats, target = [], []
    for u, d in zip(u_final, d_final):
        u_seen = int(rng.binomial(u, settled))
        d_seen = int(rng.binomial(d, settled))
        f = int(rng.integers(0, int(fuzz_fraction * (u_seen + d_seen)) + 1))
        u_obs, d_obs = fuzz_votes(u_seen, d_seen, f)
        ratio = u_obs / (u_obs + d_obs) if u_obs + d_obs else 0.5
        feats.append((u_obs, u_obs - d_obs, ratio))
        target.append(u)
    return FuzzBenchmark(np.asarray(feats, dtype=float), np.asarray(target, dtype=float))


@dataclass
class MovementStats:
    movements: np.ndarray
    median: float
    within_1: float
    within_3: float
    within_5: float


def position_movement_stats(positions_by_article: dict) -> MovementStats:
    """Distribution of rank changes between consecutive snapshots.

    Values are position sequences in time order, or lists of observations
    (sorted by bucket here).
    """
    moves = []
    for seq in positions_by_article.values():
        seq = list(seq)
        if seq and isinstance(seq[0], Observation):
            seq = [o.position for o in sorted(seq, key=lambda o: o.bucket)]
        moves.extend(abs(b - a) for a, b in zip(seq, seq[1:]))
    if not moves:
        raise ValueError("need an article with at least two observations")
    m = np.asarray(moves, dtype=float)
    return MovementStats(
        movements=m,
        median=float(np.median(m)),
        within_1=float(np.mean(m <= 1)),
        within_3=float(np.mean(m <= 3)),
        within_5=float(np.mean(m <= 5)),
    )
