"""Expected-information-gain query selection over a subsampled candidate pool.

Each candidate pair is scored by the feedback-probability-weighted KL
divergence between the posterior predictive before and after a hypothetical
answer, summed over the training rows.  Scanning a random pool of size
``10 p`` instead of all pairs keeps the selected pair near-optimal with
probability ``1 - (1 - eps)^{|pool|}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .data import (Answer, Dataset, FeedbackRecord, HyperParameters,
                   MetaFeatureMatrix, ValidationError)
from .feedback import similarity_probability
from .inference import FitSettings, MapResult, fit_map
from .kernel import pair_descriptor
from .posterior import ModelState, build_state, sum_kl_over_training


class PoolExhausted(ValidationError):
    """No unanswered pairs remain; the elicitation is complete."""


DEFAULT_EPSILON = 0.001


@dataclass(frozen=True)
class QueryPool:
    candidates: tuple
    pool_size_target: int
    epsilon: float = DEFAULT_EPSILON
    seed: int = 0


@dataclass(frozen=True)
class UtilityReport:
    pair: tuple
    expected_gain: float
    gain_if_similar: float
    gain_if_dissimilar: float
    p_similar: float
    refits_converged: bool = True


def all_pairs(p: int) -> list:
    """Every unordered feature pair (i < j)."""
    return [(i, j) for i in range(p) for j in range(i + 1, p)]


def sample_pool(universe: Iterable[tuple], answered: Iterable[tuple],
                target: int, seed: int = 0,
                epsilon: float = DEFAULT_EPSILON) -> QueryPool:
    """Uniform sample without replacement of unanswered pairs."""
    if target < 1:
        raise ValidationError("pool target must be >= 1")
    answered = {tuple(sorted(p)) for p in answered}
    remaining = [p for p in universe if tuple(sorted(p)) not in answered]
    if not remaining:
        raise PoolExhausted("all feature pairs have been answered")
    if len(remaining) <= target:
        chosen = remaining
    else:
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(remaining), size=target, replace=False)
        chosen = [remaining[k] for k in sorted(idx)]
    return QueryPool(candidates=tuple(chosen), pool_size_target=target,
                     epsilon=epsilon, seed=seed)


def pair_utility(state: ModelState, ds: Dataset, U: MetaFeatureMatrix,
                 hp: HyperParameters, pair: tuple,
                 settings: Optional[FitSettings] = None,
                 warm_start: bool = True) -> UtilityReport:
    """Expected KL gain of querying one pair, via two hypothetical refits.

    The feedback probability is the plug-in Bernoulli at the current MAP.
    Each hypothetical answer triggers a (by default warm-started, budget-
    capped) refit; a refit that fails to converge contributes its best
    iterate and flags the report.
    """
    i, j = sorted(pair)
    answered = {rec.pair for rec in state.feedbacks}
    if (i, j) in answered:
        raise ValidationError(f"pair ({i}, {j}) was already answered")
    settings = settings or FitSettings()
    w = pair_descriptor(U, i, j)
    p_sim = similarity_probability(state.gamma, state.xi, w)
    init = MapResult(gamma=state.gamma, tau2=state.tau2, xi=state.xi,
                     converged=True, iterations=0, final_grad_norm=0.0)
    gains = {}
    all_converged = True
    for answer in (Answer.SIMILAR, Answer.DISSIMILAR):
        hypo = list(state.feedbacks) + [FeedbackRecord(i=i, j=j, answer=answer)]
        res = fit_map(ds, U, hypo, hp, init=init, settings=settings,
                      warm_start=warm_start)
        all_converged &= res.converged
        after = build_state(ds, U, hp, res, hypo, jitter=settings.jitter)
        gains[answer] = sum_kl_over_training(after, state, ds)
    expected = p_sim * gains[Answer.SIMILAR] + (1.0 - p_sim) * gains[Answer.DISSIMILAR]
    return UtilityReport(pair=(i, j), expected_gain=float(expected),
                         gain_if_similar=float(gains[Answer.SIMILAR]),
                         gain_if_dissimilar=float(gains[Answer.DISSIMILAR]),
                         p_similar=float(p_sim), refits_converged=all_converged)


def select_query(pool: QueryPool, reports: Sequence[UtilityReport]) -> tuple:
    """Argmax of expected gain; exact ties go to the smallest (i, j)."""
    if not reports:
        raise ValidationError("no utility reports to select from")
    by_pair = {r.pair: r for r in reports}
    missing = set(pool.candidates) - set(by_pair)
    if missing:
        raise ValidationError(f"missing reports for candidates: {sorted(missing)[:3]}")
    best = min(by_pair.values(), key=lambda r: (-r.expected_gain, r.pair))
    return best.pair


def near_optimal_probability(epsilon: float, pool_size: int) -> float:
    """Probability the pool argmax ranks in the top-epsilon fraction overall."""
    if not 0.0 < epsilon < 1.0:
        raise ValidationError("epsilon must lie in (0, 1)")
    if pool_size < 1:
        raise ValidationError("pool size must be >= 1")
    return float(-np.expm1(pool_size * np.log1p(-epsilon)))
