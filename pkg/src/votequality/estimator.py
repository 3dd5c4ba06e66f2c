"""Poisson regression with article and position fixed effects.

The expected number of votes an article receives in one time bucket is

    exp(q[article] + p[position] + beta . covariates)

where the covariates depend on the model variant (age in hours, log of the
displayed score, or raw download count). Parameters are fitted by maximum
likelihood with L-BFGS; the position at ``reference_position`` is pinned to
``p = 0`` so that ``q`` is identified.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np
import scipy.optimize
import scipy.sparse
import scipy.sparse.csgraph
import scipy.sparse.linalg
from scipy.special import gammaln

logger = logging.getLogger(__name__)

LBFGS_HANDOFF_GTOL = 1e-3


class Variant(enum.Enum):
    BASE = "base"
    BASE_TIME = "basetime"
    FULL = "full"
    MUSICLAB = "musiclab"

    @property
    def covariates(self) -> tuple[str, ...]:
        return _COVARIATES[self]


_COVARIATES = {
    Variant.BASE: (),
    Variant.BASE_TIME: ("age",),
    Variant.FULL: ("age", "score"),
    Variant.MUSICLAB: ("social",),
}


@dataclass(frozen=True)
class Observation:
    """Votes an article received during one time bucket.

    ``displayed_score`` and ``age_hours`` are measured at the start of the
    bucket. For MusicLab data ``bucket`` indexes the visiting user,
    ``votes_up`` is the 0/1 download indicator and ``displayed_score`` is the
    item's download count when the user arrived.
    """

    bucket: int
    article_id: Hashable
    position: int
    votes_up: int
    votes_down: int = 0
    displayed_score: int = 0
    age_hours: float = 0.0

    def __post_init__(self):
        if self.position < 1:
            raise ValueError(f"position must be >= 1, got {self.position}")
        if self.votes_up < 0 or self.votes_down < 0:
            raise ValueError("vote counts must be nonnegative")
        if self.age_hours < 0:
            raise ValueError("age must be nonnegative")

    @property
    def votes(self) -> int:
        return self.votes_up + self.votes_down


@dataclass
class FitOptions:
    reference_position: int | None = None  # None: smallest observed position
    tolerance: float = 1e-8
    max_iterations: int = 500
    ridge: float = 0.0
    min_article_votes: int = 1

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class Design:
    """Dense parameter indexing for a set of observations.

    Parameter vector layout: ``[q (one per article), p (one per position
    except the reference), betas (one per covariate)]``.
    """

    variant: Variant
    articles: list
    positions: list[int]
    reference_position: int
    article_idx: np.ndarray
    position_idx: np.ndarray
    covariates: np.ndarray
    votes: np.ndarray
    excluded: dict = field(default_factory=dict)
    excluded_positions: list = field(default_factory=list)

    def __post_init__(self):
        self._log_factorial = float(np.sum(gammaln(self.votes + 1.0)))
        ref = self.positions.index(self.reference_position)
        # slot of each position in the free block, -1 for the reference
        self._free_slot = np.array(
            [-1 if k == ref else (k if k < ref else k - 1) for k in range(len(self.positions))]
        )

    @property
    def n_articles(self) -> int:
        return len(self.articles)

    @property
    def n_positions(self) -> int:
        return len(self.positions)

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_params(self) -> int:
        return self.n_articles + self.n_positions - 1 + self.n_covariates

    @property
    def n_obs(self) -> int:
        return len(self.votes)

    def unpack(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Split ``theta`` into (q, p over all positions, betas)."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {theta.shape}")
        a, m = self.n_articles, self.n_positions - 1
        q = theta[:a]
        p = np.zeros(self.n_positions)
        free = self._free_slot >= 0
        p[free] = theta[a : a + m][self._free_slot[free]]
        return q, p, theta[a + m :]

    def pack(self, q: np.ndarray, p: np.ndarray, betas: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`unpack`; ``p`` must already be zero at the reference."""
        free = self._free_slot >= 0
        p_free = np.empty(self.n_positions - 1)
        p_free[self._free_slot[free]] = np.asarray(p, dtype=float)[free]
        return np.concatenate([np.asarray(q, dtype=float), p_free, np.asarray(betas, dtype=float)])

    def linear_predictor(self, theta: np.ndarray) -> np.ndarray:
        q, p, betas = self.unpack(theta)
        eta = q[self.article_idx] + p[self.position_idx]
        if self.n_covariates:
            eta = eta + self.covariates @ betas
        return eta

    def connected_components(self) -> int:
        """Components of the article/position co-occurrence graph.

        More than one component means q and p are only identified up to a
        separate shift per component.
        """
        a = self.n_articles
        n = a + self.n_positions
        graph = scipy.sparse.coo_matrix(
            (np.ones(self.n_obs), (self.article_idx, a + self.position_idx)), shape=(n, n)
        )
        n_comp, _ = scipy.sparse.csgraph.connected_components(graph, directed=False)
        return int(n_comp)

    def rank_deficient(self) -> bool:
        if self.connected_components() > 1:
            return True
        for k in range(self.n_covariates):
            if np.ptp(self.covariates[:, k]) == 0:
                return True
        return False

    def fisher_matrix(self, theta: np.ndarray) -> scipy.sparse.csr_matrix:
        """Negative Hessian of the log-likelihood, X^T diag(mu) X."""
        mu = np.exp(self.linear_predictor(theta))
        X = self.matrix()
        return (X.T @ scipy.sparse.diags(mu) @ X).tocsr()

    def matrix(self) -> scipy.sparse.csr_matrix:
        """Sparse design matrix in the parameter layout."""
        n, a, m = self.n_obs, self.n_articles, self.n_positions - 1
        rows = [np.arange(n)]
        cols = [self.article_idx]
        vals = [np.ones(n)]
        slot = self._free_slot[self.position_idx]
        keep = slot >= 0
        rows.append(np.arange(n)[keep])
        cols.append(a + slot[keep])
        vals.append(np.ones(int(keep.sum())))
        for k in range(self.n_covariates):
            rows.append(np.arange(n))
            cols.append(np.full(n, a + m + k))
            vals.append(self.covariates[:, k])
        return scipy.sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, self.n_params),
        )


def covariate_matrix(observations: Sequence[Observation], variant: Variant) -> np.ndarray:
    cols = []
    for name in variant.covariates:
        if name == "age":
            cols.append([o.age_hours for o in observations])
        elif name == "score":
            cols.append([math.log(max(o.displayed_score, 1)) for o in observations])
        else:
            cols.append([float(o.displayed_score) for o in observations])
    if not cols:
        return np.zeros((len(observations), 0))
    return np.asarray(cols, dtype=float).T


def build_design(
    observations: Sequence[Observation],
    variant: Variant = Variant.BASE,
    options: FitOptions | None = None,
) -> Design:
    options = options or FitOptions()
    observations = list(observations)
    if not observations:
        raise ValueError("no observations")
    seen = set()
    totals: dict = {}
    for o in observations:
        key = (o.bucket, o.article_id)
        if key in seen:
            raise ValueError(f"duplicate observation for bucket {o.bucket}, article {o.article_id!r}")
        seen.add(key)
        if variant is Variant.MUSICLAB and o.votes > 1:
            raise ValueError("MusicLab observations carry 0/1 download indicators")
        totals[o.article_id] = totals.get(o.article_id, 0) + o.votes

    excluded = {a: v for a, v in totals.items() if v < options.min_article_votes}
    if excluded:
        logger.info("excluding %d articles below %d votes", len(excluded), options.min_article_votes)
    kept = [o for o in observations if o.article_id not in excluded]
    if not kept:
        raise ValueError("every article was excluded by min_article_votes")
    # a position that never drew a vote has its MLE at p = -inf; dropping its
    # observations is the limit of the fit and keeps the optimum finite
    pos_totals: dict = {}
    for o in kept:
        pos_totals[o.position] = pos_totals.get(o.position, 0) + o.votes
    silent = sorted(j for j, v in pos_totals.items() if v == 0)
    if silent:
        kept = [o for o in kept if pos_totals[o.position] > 0]

    articles = list(dict.fromkeys(o.article_id for o in kept))
    positions = sorted({o.position for o in kept})
    ref = options.reference_position if options.reference_position is not None else positions[0]
    if ref not in positions:
        raise ValueError(f"reference position {ref} is not observed")
    a_index = {a: k for k, a in enumerate(articles)}
    p_index = {p: k for k, p in enumerate(positions)}
    return Design(
        variant=variant,
        articles=articles,
        positions=positions,
        reference_position=ref,
        article_idx=np.array([a_index[o.article_id] for o in kept], dtype=np.intp),
        position_idx=np.array([p_index[o.position] for o in kept], dtype=np.intp),
        covariates=covariate_matrix(kept, variant),
        votes=np.array([o.votes for o in kept], dtype=float),
        excluded=excluded,
        excluded_positions=silent,
    )


def log_likelihood(theta: np.ndarray, design: Design) -> float:
    """Poisson log-likelihood, sum of ``v log(mu) - mu - log(v!)``."""
    eta = design.linear_predictor(theta)
    return float(np.sum(design.votes * eta - np.exp(eta)) - design._log_factorial)


def gradient(theta: np.ndarray, design: Design) -> np.ndarray:
    """Analytic gradient of :func:`log_likelihood`."""
    eta = design.linear_predictor(theta)
    resid = design.votes - np.exp(eta)
    return _score_vector(resid, design)


def _score_vector(resid: np.ndarray, design: Design) -> np.ndarray:
    g_q = np.bincount(design.article_idx, weights=resid, minlength=design.n_articles)
    g_p_all = np.bincount(design.position_idx, weights=resid, minlength=design.n_positions)
    free = design._free_slot >= 0
    g_p = np.empty(design.n_positions - 1)
    g_p[design._free_slot[free]] = g_p_all[free]
    g_b = design.covariates.T @ resid
    return np.concatenate([g_q, g_p, g_b])


def _penalized(theta, design, ridge):
    eta = design.linear_predictor(theta)
    mu = np.exp(eta)
    ll = float(np.sum(design.votes * eta - mu)) - design._log_factorial
    g = _score_vector(design.votes - mu, design)
    if ridge:
        k = design.n_articles + design.n_positions - 1
        fe = theta[:k]
        ll -= 0.5 * ridge * float(fe @ fe)
        g[:k] -= ridge * fe
    return ll, g


@dataclass
class FitResult:
    variant: Variant
    reference_position: int
    q: dict
    p: dict
    beta_age: float = 0.0
    beta_score: float = 0.0
    beta_social: float = 0.0
    log_likelihood: float = float("nan")
    converged: bool = False
    iterations: int = 0
    gradient_norm: float = float("nan")
    rank_deficient: bool = False
    excluded: dict = field(default_factory=dict)
    excluded_positions: list = field(default_factory=list)

    @property
    def betas(self) -> dict[str, float]:
        names = {"age": self.beta_age, "score": self.beta_score, "social": self.beta_social}
        return {k: names[k] for k in self.variant.covariates}

    def theta(self, design: Design) -> np.ndarray:
        """Parameter vector for ``design`` (which must share articles/positions)."""
        q = np.array([self.q[a] for a in design.articles])
        p = np.array([self.p[j] for j in design.positions])
        b = np.array(list(self.betas.values()))
        return design.pack(q, p - self.p.get(design.reference_position, 0.0), b)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["variant"] = self.variant.value
        out["q"] = {str(k): v for k, v in self.q.items()}
        out["p"] = {str(k): v for k, v in self.p.items()}
        out["excluded"] = {str(k): v for k, v in self.excluded.items()}
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data: Mapping) -> "FitResult":
        data = dict(data)
        data["variant"] = Variant(data["variant"])
        data["p"] = {int(k): float(v) for k, v in data["p"].items()}
        data["q"] = {k: float(v) for k, v in data["q"].items()}
        known = cls.__dataclass_fields__
        return cls(**{k: v for k, v in data.items() if k in known})

    @classmethod
    def from_json(cls, text: str) -> "FitResult":
        return cls.from_dict(json.loads(text))


def _newton_polish(theta, design, ridge, tol, budget):
    """Damped Newton steps on the concave objective until the gradient is small."""
    steps = 0
    ll, g = _penalized(theta, design, ridge)
    k = design.n_articles + design.n_positions - 1
    while steps < budget and np.max(np.abs(g)) > tol:
        H = design.fisher_matrix(theta)
        diag = np.zeros(design.n_params)
        diag[:k] = ridge
        # tiny damping keeps the solve defined on rank-deficient designs
        diag += 1e-10 * H.diagonal() + 1e-300
        step = scipy.sparse.linalg.spsolve((H + scipy.sparse.diags(diag)).tocsc(), g)
        t = 1.0
        while t > 1e-8:
            cand = theta + t * step
            ll_c, g_c = _penalized(cand, design, ridge)
            if np.isfinite(ll_c) and ll_c >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        else:
            break
        theta, ll, g = cand, ll_c, g_c
        steps += 1
    return theta, steps


def fit_design(design: Design, options: FitOptions | None = None) -> FitResult:
    options = options or FitOptions()
    ridge = options.ridge

    def objective(theta):
        ll, g = _penalized(theta, design, ridge)
        return -ll, -g

    theta0 = np.zeros(design.n_params)
    res = scipy.optimize.minimize(
        objective,
        theta0,
        jac=True,
        method="L-BFGS-B",
        options={
            "maxiter": max(1, options.max_iterations // 5),
            # L-BFGS stalls near tight tolerances on ill-conditioned designs;
            # exact Newton steps finish the job below
            "gtol": max(options.tolerance, LBFGS_HANDOFF_GTOL),
            "ftol": 1e-15,
            "maxcor": 20,
        },
    )
    theta = res.x
    iterations = int(res.nit)
    _, g = _penalized(theta, design, ridge)
    if np.max(np.abs(g)) > options.tolerance and iterations < options.max_iterations:
        theta, extra = _newton_polish(theta, design, ridge, options.tolerance, options.max_iterations - iterations)
        iterations += extra
        _, g = _penalized(theta, design, ridge)
    grad_norm = float(np.max(np.abs(g))) if g.size else 0.0
    converged = grad_norm <= options.tolerance

    q, p, betas = design.unpack(theta)
    named = dict(zip(design.variant.covariates, betas))
    result = FitResult(
        variant=design.variant,
        reference_position=design.reference_position,
        q=dict(zip(design.articles, q.tolist())),
        p=dict(zip(design.positions, p.tolist())),
        beta_age=float(named.get("age", 0.0)),
        beta_score=float(named.get("score", 0.0)),
        beta_social=float(named.get("social", 0.0)),
        log_likelihood=log_likelihood(theta, design),
        converged=converged,
        iterations=iterations,
        gradient_norm=grad_norm,
        rank_deficient=design.rank_deficient(),
        excluded=dict(design.excluded),
        excluded_positions=list(design.excluded_positions),
    )
    if not converged:
        logger.warning("fit did not converge: gradient max-norm %.3g after %d iterations", grad_norm, iterations)
    return result


def fit(
    observations: Sequence[Observation],
    variant: Variant = Variant.BASE,
    options: FitOptions | None = None,
) -> FitResult:
    """Maximum-likelihood fit of the Poisson fixed-effects model."""
    options = options or FitOptions()
    return fit_design(build_design(observations, variant, options), options)


def _linear_terms(fit: FitResult, position: int, age_hours: float, displayed_score: float) -> float:
    if position not in fit.p:
        raise KeyError(f"position {position} not in fit")
    eta = fit.p[position] + fit.beta_age * age_hours
    if fit.beta_score:
        eta += fit.beta_score * math.log(max(displayed_score, 1))
    return eta


def predict_rate(
    fit: FitResult, article_id: Hashable, position: int, age_hours: float = 0.0, displayed_score: float = 1
) -> float:
    """Expected votes in one bucket (the Poisson conditional mean).

    For MusicLab fits the download-count term is included via
    ``displayed_score``.
    """
    if article_id not in fit.q:
        raise KeyError(f"article {article_id!r} not in fit")
    eta = fit.q[article_id] + _linear_terms(fit, position, age_hours, displayed_score)
    if fit.beta_social:
        eta += fit.beta_social * displayed_score
    return math.exp(eta)


def predict_observations(fit: FitResult, observations: Iterable[Observation]) -> np.ndarray:
    """Vectorized :func:`predict_rate` over observations."""
    observations = list(observations)
    try:
        q = np.array([fit.q[o.article_id] for o in observations])
        p = np.array([fit.p[o.position] for o in observations])
    except KeyError as exc:
        raise KeyError(f"unknown article or position: {exc.args[0]!r}") from None
    eta = q + p
    if observations:
        cov = covariate_matrix(observations, fit.variant)
        betas = np.array(list(fit.betas.values()))
        if betas.size:
            eta = eta + cov @ betas
    return np.exp(eta)


def predict_musiclab_random_world(
    fit: FitResult, exposures: Iterable[tuple[int, Hashable, int]]
) -> dict:
    """Expected downloads per item in a randomly ordered world.

    ``exposures`` holds one ``(user, item, position)`` tuple per item shown to
    each user. The download-count term is dropped because counts are not
    displayed in that world.
    """
    if fit.variant is not Variant.MUSICLAB:
        raise ValueError("requires a MusicLab fit")
    totals: dict = {}
    for _user, item, position in exposures:
        if item not in fit.q:
            raise KeyError(f"item {item!r} not in fit")
        if position not in fit.p:
            raise KeyError(f"position {position} not in fit")
        totals[item] = totals.get(item, 0.0) + math.exp(fit.q[item] + fit.p[position])
    return totals
