"""Bernoulli likelihood of expert similarity answers.

An answer is "similar" (+1) with probability ``q = logistic(xi - gamma'w)``:
two features are likely judged similar only when their weighted descriptor
distance falls below the threshold ``xi``.  "I don't know" answers carry no
likelihood weight and are dropped before terms are built.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from .data import Answer, FeedbackRecord, MetaFeatureMatrix, ValidationError
from .kernel import PairDescriptor, pair_descriptor


@dataclass(frozen=True)
class FeedbackLikelihoodTerm:
    pair: PairDescriptor
    f: int  # +1 similar, -1 dissimilar

    def __post_init__(self):
        if self.f not in (+1, -1):
            raise ValidationError("feedback sign must be +1 or -1")


def terms_from_records(U: MetaFeatureMatrix,
                       records: Iterable[FeedbackRecord]) -> list:
    """Convert answered records to likelihood terms, dropping unknowns."""
    terms = []
    for rec in records:
        if rec.answer == Answer.UNKNOWN:
            continue
        f = +1 if rec.answer == Answer.SIMILAR else -1
        terms.append(FeedbackLikelihoodTerm(pair=pair_descriptor(U, rec.i, rec.j), f=f))
    return terms


def similarity_probability(gamma, xi: float, w) -> float:
    """P(answer = similar) = logistic(xi - gamma'w), strictly inside (0, 1)."""
    gamma = np.asarray(gamma, dtype=float)
    if (gamma < 0).any():
        raise ValidationError("gamma entries must be nonnegative")
    wv = w.w if isinstance(w, PairDescriptor) else np.asarray(w, dtype=float)
    return float(expit(xi - gamma @ wv))


def _term_arrays(terms: Sequence[FeedbackLikelihoodTerm]):
    W = np.array([t.pair.w for t in terms], dtype=float)
    f = np.array([t.f for t in terms], dtype=float)
    return W, f


def feedback_log_likelihood(gamma, xi: float,
                            terms: Sequence[FeedbackLikelihoodTerm]) -> float:
    """Sum of log q for similar answers and log(1-q) for dissimilar ones."""
    if not terms:
        return 0.0
    gamma = np.asarray(gamma, dtype=float)
    W, f = _term_arrays(terms)
    z = W @ gamma - xi
    # log sigma(-f z) = -log(1 + exp(f z)), evaluated in log space
    return float(-np.logaddexp(0.0, f * z).sum())


def feedback_log_likelihood_grad(gamma, xi: float,
                                 terms: Sequence[FeedbackLikelihoodTerm]):
    """Value plus gradient w.r.t. (gamma, xi) of the feedback log-likelihood."""
    gamma = np.asarray(gamma, dtype=float)
    if not terms:
        return 0.0, np.zeros_like(gamma), 0.0
    W, f = _term_arrays(terms)
    z = W @ gamma - xi
    value = float(-np.logaddexp(0.0, f * z).sum())
    s = f * expit(f * z)  # d/dz of -softplus(f z) is -f*sigmoid(f z)
    grad_gamma = -(W.T @ s)
    grad_xi = float(s.sum())
    return value, grad_gamma, grad_xi
