"""Independent reference implementations used to check the library."""

import itertools
import math

import numpy as np


def central_difference(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        out[k] = (f(x + e) - f(x - e)) / (2 * h)
    return out


def relative_error(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def average_ranks(values):
    """1-based ranks with ties sharing the mean of their positions, by a plain loop."""
    order = sorted(range(len(values)), key=lambda k: values[k])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        mean_rank = (i + j) / 2 + 1
        for k in order[i : j + 1]:
            ranks[k] = mean_rank
        i = j + 1
    return ranks


def pearson(x, y):
    n = len(x)
    mx, my = math.fsum(x) / n, math.fsum(y) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = math.fsum((a - mx) ** 2 for a in x)
    syy = math.fsum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def brute_spearman(x, y):
    return pearson(average_ranks(list(x)), average_ranks(list(y)))


def exhaustive_topk(quality, popularity, k_percent):
    """Top-m sets found by checking every m-subset for dominance, ties by id."""
    ids = sorted(set(quality) & set(popularity))
    m = math.floor(k_percent * len(ids) + 1e-9)

    def top_set(score):
        def beats(a, b):  # a ranks ahead of b
            return (score[a], b) > (score[b], a)

        for subset in itertools.combinations(ids, m):
            rest = [b for b in ids if b not in subset]
            if all(beats(a, b) for a in subset for b in rest):
                return set(subset)
        raise AssertionError("no dominating subset")

    return len(top_set(quality) & top_set(popularity)) / m


def poisson_loglik(votes, mu):
    return math.fsum(v * math.log(m) - m - math.lgamma(v + 1) for v, m in zip(votes, mu))
