import io
import json
from datetime import datetime, time, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from votequality.evaluation import metrics
from votequality.ingest import (
    FilterConfig,
    IngestError,
    KNNRegressor,
    RawObservation,
    Site,
    apply_inclusion_filters,
    defuzz_exact,
    defuzz_regress,
    dump_observations,
    final_scores,
    parse_observations,
    position_movement_stats,
    synthetic_fuzz_dataset,
    to_observations,
)
from votequality.market_sim import fuzz_votes, to_raw_observations

EDT = timezone(timedelta(hours=-4))
MONDAY = datetime(2014, 5, 26, 9, 0, tzinfo=EDT)


def rec(t=MONDAY, aid="a", pos=7, up=1, down=0, score=3, submitted=None):
    submitted = submitted or t - timedelta(minutes=30)
    return {"t": t.isoformat(), "id": aid, "pos": pos, "up": up, "down": down, "score": score,
            "submitted": submitted.isoformat()}


def lines(*records):
    return io.StringIO("".join(json.dumps(r) + "\n" for r in records))


def raw(aid, pos, t, up=1, submitted=None):
    return RawObservation(t, aid, pos, up, 0, 5, submitted or MONDAY - timedelta(hours=1))


def test_parse_empty_and_valid():
    assert parse_observations(io.StringIO("")) == []
    [r] = parse_observations(lines(rec()), Site.HN)
    assert r.position == 7 and r.timestamp == MONDAY


def test_parse_errors_carry_line_numbers():
    bad = lines(rec(), rec(pos=0, aid="b"), rec(aid="c", down=2), {"id": "x"})
    with pytest.raises(IngestError) as info:
        parse_observations(bad, Site.HN)
    assert [n for n, _ in info.value.errors] == [2, 3, 4]


def test_parse_rejects_bad_records():
    cases = [
        rec(up=-1),
        rec(submitted=MONDAY + timedelta(hours=1)),
        {**rec(), "t": "2014-05-26T09:00:00"},  # no offset
        {**rec(), "pos": "7"},
        {**rec(), "up": True},
    ]
    for case in cases:
        with pytest.raises(IngestError):
            parse_observations(lines(case))
    with pytest.raises(IngestError, match="duplicate"):
        parse_observations(lines(rec(), rec(pos=3)))
    with pytest.raises(IngestError):
        parse_observations(io.StringIO("{not json}\n"))


def test_reddit_allows_downvotes():
    [r] = parse_observations(lines(rec(down=4)), Site.REDDIT)
    assert r.votes_down == 4


def test_dump_parse_roundtrip():
    records = parse_observations(lines(rec(), rec(aid="b", up=0)))
    buf = io.StringIO()
    assert dump_observations(records, buf) == 2
    buf.seek(0)
    assert parse_observations(buf) == records


def test_weekend_snapshot_dropped():
    saturday = datetime(2014, 5, 31, 12, 0, tzinfo=EDT)
    rows = [raw("a", 7, saturday)] + [raw("b", 7, MONDAY + timedelta(minutes=10 * k)) for k in range(5)]
    result = apply_inclusion_filters(rows, FilterConfig(p_max=50))
    assert result.report["time_window"] == 1
    assert {o.article_id for o in result.observations} == {"b"}


def test_clock_window_uses_timezone():
    early = datetime(2014, 5, 26, 9, 30, tzinfo=timezone.utc)  # 05:30 in New York
    rows = [raw("a", 7, early + timedelta(minutes=10 * k), submitted=early) for k in range(6)]
    result = apply_inclusion_filters(rows, FilterConfig(p_max=50, min_observations=1))
    assert result.report["time_window"] == 3


def test_min_observations_rule():
    rows = [raw("a", 7, MONDAY + timedelta(minutes=10 * k)) for k in range(4)]
    rows += [raw("b", 7, MONDAY + timedelta(minutes=10 * k)) for k in range(5)]
    result = apply_inclusion_filters(rows, FilterConfig(p_max=50))
    assert result.report["min_observations"] == 4
    assert {o.article_id for o in result.observations} == {"b"}


def test_median_initial_position():
    rows = [raw(a, p, MONDAY) for a, p in (("a", 3), ("b", 10), ("c", 40))]
    result = apply_inclusion_filters(rows, FilterConfig(min_observations=1))
    assert result.p_max == 10
    assert result.report["position_range"] == 2  # 3 is below p_min, 40 above p_max


def test_max_age_rule():
    sub = MONDAY - timedelta(hours=11, minutes=50)
    rows = [raw("a", 7, MONDAY + timedelta(minutes=10 * k), submitted=sub) for k in range(4)]
    result = apply_inclusion_filters(rows, FilterConfig(p_max=50, min_observations=1))
    assert result.report["max_age"] == 2


def test_filter_config_validation():
    with pytest.raises(ValueError):
        FilterConfig(window_start=time(20), window_end=time(6))
    with pytest.raises(ValueError):
        FilterConfig(p_min=10, p_max=5)
    with pytest.raises(ValueError):
        FilterConfig(p_max="mean")


def test_report_counts_sum(small_log):
    rows = to_raw_observations(small_log)
    result = apply_inclusion_filters(rows, FilterConfig(p_max=20))
    assert sum(result.report.values()) == len(rows) - len(result.observations)
    assert len(result.kept) == len(result.observations)


def test_filter_idempotent(small_log):
    rows = to_raw_observations(small_log)
    cfg = FilterConfig(p_max=20, weekdays_only=False, window_start=time(0), window_end=time(23, 59))
    once = apply_inclusion_filters(rows, cfg)
    twice = apply_inclusion_filters(once.kept, cfg)
    assert twice.observations == once.observations
    assert sum(twice.report.values()) == 0


def test_simulated_export_roundtrip(small_log):
    rows = to_raw_observations(small_log)
    buf = io.StringIO()
    dump_observations(rows, buf)
    buf.seek(0)
    back = to_observations(parse_observations(buf))
    offset = back[0].bucket - small_log.observations[0].bucket
    assert len(back) == len(small_log.observations)
    for a, b in zip(small_log.observations, back):
        assert (a.bucket + offset, a.article_id, a.position, a.votes_up, a.votes_down, a.displayed_score) == (
            b.bucket, b.article_id, b.position, b.votes_up, b.votes_down, b.displayed_score)
        assert b.age_hours == pytest.approx(a.age_hours)


def test_final_scores_from_last_bucket(small_log):
    finals = final_scores(small_log.observations)
    # with no off-list exposure the last snapshot plus its votes is the true final score
    assert finals == small_log.final_scores


def test_defuzz_examples():
    assert defuzz_exact(20, 0.75) == (30, 10)
    assert defuzz_exact(17, 1.0) == (17, 0)
    with pytest.raises(ValueError):
        defuzz_exact(20, 0.5)
    with pytest.raises(ValueError):
        defuzz_exact(0, 0.5)
    with pytest.raises(ValueError):
        defuzz_exact(20, 0.65)  # 43.33 upvotes
    with pytest.raises(ValueError):
        defuzz_exact(5, 1.2)


@settings(max_examples=300)
@given(st.integers(1, 1000).flatmap(lambda u: st.tuples(st.just(u), st.integers(0, u - 1))), st.integers(0, 10**4))
def test_defuzz_roundtrip_property(ud, f):
    u, d = ud
    fu, fd = fuzz_votes(u, d, f)
    assert defuzz_exact(fu - fd, u / (u + d)) == (u, d)


def test_knn_examples():
    train = [(10, 5, 0.8, 12.0), (50, 30, 0.7, 60.0), (5, 1, 0.6, 5.0)]
    assert defuzz_regress(train, (50, 30, 0.7), k=1) == 60.0
    const = [(a, b, c, 7.0) for a, b, c, _ in train]
    assert defuzz_regress(const, (1, 2, 0.3)) == 7.0
    with pytest.raises(ValueError):
        defuzz_regress([], (1, 2, 0.3))
    out = defuzz_regress(train, [(10, 5, 0.8), (5, 1, 0.6)], k=1)
    assert out.tolist() == [12.0, 5.0]


def test_knn_ties_go_to_lower_index():
    model = KNNRegressor(k=1).fit([[0.0], [2.0]], [1.0, 9.0])
    assert model.predict([[1.0]])[0] == 1.0


def test_regressor_contract():
    class Mean:
        def fit(self, X, y):
            self.m = float(np.mean(y))
            return self

        def predict(self, X):
            return np.full(len(X), self.m)

    assert defuzz_regress([(1, 1, 1, 2.0), (2, 2, 1, 4.0)], (0, 0, 0), regressor=Mean()) == 3.0


def test_fuzz_benchmark_is_deterministic_and_learnable():
    a = synthetic_fuzz_dataset(500, seed=1)
    b = synthetic_fuzz_dataset(500, seed=1)
    assert np.array_equal(a.features, b.features) and np.array_equal(a.u_true, b.u_true)
    model = KNNRegressor().fit(a.features[:400], a.u_true[:400])
    knn = metrics(a.u_true[400:], model.predict(a.features[400:]))
    naive = metrics(a.u_true[400:], a.features[400:, 0])
    assert knn.r2 > naive.r2


def test_movement_examples():
    still = position_movement_stats({"a": [4, 4, 4]})
    assert still.median == 0 and still.within_1 == 1.0
    stats = position_movement_stats({"a": [1, 2, 4]})
    assert sorted(stats.movements.tolist()) == [1, 2] and stats.median == 1.5
    with pytest.raises(ValueError):
        position_movement_stats({"a": [1]})


def test_movement_from_observations(small_log):
    stats = position_movement_stats(small_log.observations_by_article())
    assert 0 <= stats.within_1 <= stats.within_3 <= stats.within_5 <= 1
