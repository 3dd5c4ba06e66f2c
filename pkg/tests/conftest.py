import numpy as np
import pytest

from votequality.estimator import Observation
from votequality.market_sim import (
    SimConfig,
    exponential_view_curve,
    random_truth,
    run_aggregator_sim,
    spread_arrivals,
)
from votequality.ranking import RankingRule, RankMode


def two_by_two():
    """A: 4 votes at position 1, 2 at position 2; B: 2 and 1."""
    return [
        Observation(0, "A", 1, 4),
        Observation(1, "A", 2, 2),
        Observation(0, "B", 2, 1),
        Observation(1, "B", 1, 2),
    ]


def simulated_log(seed=0, n_articles=100, n_ticks=500, users=100, age_decay=0.0, quality_range=(0.02, 0.3)):
    rng = np.random.default_rng(seed)
    cfg = SimConfig(
        n_articles=n_articles,
        n_ticks=n_ticks,
        users_per_tick=users,
        rule=RankingRule(RankMode.REDDIT_HOT),
        seed=seed,
    )
    ids = cfg.article_ids()
    truth = random_truth(
        ids,
        rng,
        exponential_view_curve(n_articles, 20),
        quality_range,
        age_decay=age_decay,
        downvote_range=(0.05, 0.3),
    )
    cfg.arrival_schedule = spread_arrivals(ids, n_ticks, rng, last_tick=int(0.7 * n_ticks))
    return run_aggregator_sim(cfg, truth)


@pytest.fixture
def fixture_2x2():
    return two_by_two()


@pytest.fixture(scope="session")
def small_log():
    return simulated_log(seed=3, n_articles=30, n_ticks=150, users=60)
