import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from votequality.estimator import FitResult, Observation, Variant, fit
from votequality.evaluation import spearman
from votequality.quality import (
    SiteMode,
    VoteRatios,
    compute_vote_ratios,
    normalized_log_score,
    position_bias_curve,
    predicted_score_growth,
    quality_scores,
    total_views,
    view_estimates,
)


def make_fit(q, p, **kw):
    return FitResult(Variant.BASE, min(p), q=dict(q), p=dict(p), **kw)


def shifted(result, c):
    return make_fit({a: v + c for a, v in result.q.items()}, {j: v - c for j, v in result.p.items()})


def test_vote_ratio_examples():
    obs = [Observation(0, "a", 1, 3), Observation(1, "a", 1, 1)]
    r = compute_vote_ratios(obs)
    assert r.r_up == {"a": 1.0} and r.r_down == {"a": 0.0}
    obs = [Observation(0, "b", 1, 20, 4), Observation(1, "b", 2, 10, 6)]
    assert compute_vote_ratios(obs).r_up["b"] == 0.75
    with pytest.raises(ValueError):
        compute_vote_ratios([Observation(0, "c", 1, 0)])


def test_ratios_sum_to_one(small_log):
    fitted = fit(small_log.observations).q
    r = compute_vote_ratios([o for o in small_log.observations if o.article_id in fitted])
    for a in r.r_up:
        assert abs(r.r_up[a] + r.r_down[a] - 1) < 1e-12


def test_quality_examples():
    single = quality_scores(make_fit({"a": -2.3}, {1: 0.0}))
    assert single.quality == {"a": 1.0} and single.quantile == {"a": 0.0}
    two = quality_scores(make_fit({"a": 0.0, "b": math.log(2)}, {1: 0.0}))
    assert two.quality == {"a": 0.5, "b": 1.0}
    assert two.quantile == {"a": 0.0, "b": 1.0}


def test_reddit_quality_uses_net_share():
    ratios = VoteRatios(r_up={"a": 0.75, "b": 0.5}, r_down={"a": 0.25, "b": 0.5})
    report = quality_scores(make_fit({"a": 0.0, "b": 0.0}, {1: 0.0}), ratios, SiteMode.REDDIT)
    assert report.quality == {"a": 1.0, "b": 0.0}
    with pytest.raises(ValueError):
        quality_scores(make_fit({"a": 0.0}, {1: 0.0}), None, SiteMode.REDDIT)
    bad = VoteRatios(r_up={"a": 0.4}, r_down={"a": 0.6})
    with pytest.raises(ValueError):
        quality_scores(make_fit({"a": 0.0}, {1: 0.0}), bad, SiteMode.REDDIT)


@given(st.lists(st.floats(-20, 20), min_size=1, max_size=30), st.floats(-50, 50))
def test_quality_invariant_to_identification_shift(qs, c):
    result = make_fit({f"a{k}": v for k, v in enumerate(qs)}, {1: 0.0, 2: -0.4})
    assert quality_scores(shifted(result, c)) == quality_scores(result)


def test_quality_max_is_one_and_quantiles_consistent(small_log):
    result = fit(small_log.observations)
    report = quality_scores(result)
    assert max(report.quality.values()) == 1.0
    ids = list(report.quality)
    assert spearman([report.quality[a] for a in ids], [report.quantile[a] for a in ids]) == pytest.approx(1.0)


def test_position_curve_examples():
    single = position_bias_curve(make_fit({"a": 0.0}, {4: 0.0}))
    assert list(single) == [(4, 1.0)]
    curve = position_bias_curve(make_fit({"a": 0.0}, {1: 0.0, 2: -math.log(2)}))
    assert curve.rates == pytest.approx([1.0, 0.5], rel=1e-15)
    assert not curve.non_monotone


def test_position_curve_normalized_to_max():
    curve = position_bias_curve(make_fit({"a": 0.0}, {5: 0.0, 6: 0.4, 7: -1.0}))
    assert max(curve.rates) == 1.0
    assert all(r > 0 for r in curve.rates)


def test_non_monotone_threshold():
    slight = position_bias_curve(make_fit({"a": 0.0}, {1: 0.0, 2: math.log(1.04)}))
    assert not slight.non_monotone
    jump = position_bias_curve(make_fit({"a": 0.0}, {1: 0.0, 2: -1.0, 3: -1.0 + math.log(1.06)}))
    assert jump.non_monotone


def test_total_views_examples():
    result = make_fit({"a": 0.0}, {1: 0.0, 2: -math.log(2)})
    assert total_views(result, [1, 1]) == 2.0
    assert total_views(result, [1, 2]) == 1.5
    assert total_views(result, []) == 0.0
    with pytest.raises(KeyError):
        total_views(result, [3])


@given(st.lists(st.sampled_from([1, 2, 3]), max_size=20), st.lists(st.sampled_from([1, 2, 3]), max_size=20))
def test_total_views_additive(t1, t2):
    result = make_fit({"a": 0.0}, {1: 0.0, 2: -0.3, 3: -1.7})
    assert total_views(result, t1 + t2) == pytest.approx(total_views(result, t1) + total_views(result, t2))


def test_view_estimates_sum_trajectories(small_log):
    result = fit(small_log.observations)
    views = view_estimates(result, small_log.observations)
    a = next(iter(views))
    traj = [o.position for o in small_log.observations if o.article_id == a and o.position in result.p]
    assert views[a] == pytest.approx(total_views(result, traj))


def test_score_growth_examples():
    result = make_fit({"a": math.log(10)}, {1: 0.0})
    ratios = VoteRatios(r_up={"a": 0.8}, r_down={"a": 0.2})
    assert predicted_score_growth(result, ratios, "a", 1) == pytest.approx(6.0)
    even = VoteRatios(r_up={"a": 0.5}, r_down={"a": 0.5})
    assert predicted_score_growth(result, even, "a", 1) == 0.0
    assert predicted_score_growth(result, None, "a", 1, mode=SiteMode.HN) == pytest.approx(10.0)


def test_normalized_log_score_examples():
    out = normalized_log_score({"a": 10, "b": 100})
    assert out["a"] == pytest.approx(0.5) and out["b"] == 1.0
    assert normalized_log_score({"a": 7}) == {"a": 1.0}
    assert normalized_log_score({"a": 1, "b": 50})["a"] == 0.0
    with pytest.raises(ValueError):
        normalized_log_score({"a": 0})


@given(st.dictionaries(st.text(min_size=1, max_size=3), st.integers(1, 10**6), min_size=1, max_size=20))
def test_normalized_log_score_range(scores):
    out = normalized_log_score(scores)
    assert max(out.values()) == 1.0
    assert all(0.0 <= v <= 1.0 for v in out.values())
