"""Closed-form NIG posterior, Student-t predictive, and predictive KL divergence.

All p x p solves go through Cholesky factorizations; nothing is inverted
explicitly.  The Gaussian relaxation of the Student-t predictive exists only
to make the KL inside the utility computation cheap; reported predictions use
the exact Student-t.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve

from .data import (Dataset, FeedbackRecord, HyperParameters,
                   MetaFeatureMatrix, ValidationError)
from .inference import FitSettings, MapResult
from .kernel import DEFAULT_JITTER, build_covariance, chol_lower


@dataclass(frozen=True)
class NIGPosterior:
    """Normal-inverse-gamma joint posterior over (weights, noise variance)."""

    mu_star: np.ndarray
    Sigma_star: np.ndarray
    a_star: float
    b_star: float


@dataclass(frozen=True)
class PredictiveT:
    dof: float
    location: float
    scale2: float


@dataclass(frozen=True)
class PredictiveGaussian:
    mean: float
    variance: float


@dataclass(frozen=True)
class ModelState:
    """MAP point estimates with the covariance and posterior they imply."""

    gamma: np.ndarray
    tau2: float
    xi: float
    K: np.ndarray
    posterior: NIGPosterior
    feedbacks: tuple


def nig_posterior(ds: Dataset, K: np.ndarray, tau2: float,
                  hp: HyperParameters) -> NIGPosterior:
    """Conjugate posterior given the covariance K and scale tau2.

    The precision ``(tau2 K)^-1 + X'X`` is assembled with a Cholesky solve of
    ``tau2 K`` (no explicit inverse) and itself factorized once for both the
    mean and the covariance.
    """
    if tau2 <= 0:
        raise ValidationError("tau2 must be strictly positive")
    X, y = ds.X, ds.y
    n, p = X.shape
    Lk = chol_lower(tau2 * K)
    prior_prec = cho_solve((Lk, True), np.eye(p))
    A = prior_prec + X.T @ X
    La = chol_lower(0.5 * (A + A.T))
    Xty = X.T @ y
    mu = cho_solve((La, True), Xty)
    Sigma = cho_solve((La, True), np.eye(p))
    Sigma = 0.5 * (Sigma + Sigma.T)
    a_star = hp.a_sigma + 0.5 * n
    # mu' A mu = mu' X'y since A mu = X'y
    b_star = hp.b_sigma + 0.5 * (float(y @ y) - float(mu @ Xty))
    return NIGPosterior(mu_star=mu, Sigma_star=Sigma, a_star=float(a_star),
                        b_star=float(b_star))


def nig_posterior_woodbury(ds: Dataset, K: np.ndarray, tau2: float,
                           hp: HyperParameters) -> NIGPosterior:
    """Algebraically equivalent route through the n x n system.

    Kept as an independent code path; the test suite checks it against
    :func:`nig_posterior` rather than replacing it.
    """
    X, y = ds.X, ds.y
    n, p = X.shape
    tK = tau2 * K
    S = X @ tK @ X.T
    S[np.diag_indices(n)] += 1.0
    Ls = chol_lower(S)
    tKXt = tK @ X.T
    mu = tKXt @ cho_solve((Ls, True), y)
    Sigma = tK - tKXt @ cho_solve((Ls, True), tKXt.T)
    Sigma = 0.5 * (Sigma + Sigma.T)
    a_star = hp.a_sigma + 0.5 * n
    b_star = hp.b_sigma + 0.5 * (float(y @ y) - float(y @ (X @ mu)))
    return NIGPosterior(mu_star=mu, Sigma_star=Sigma, a_star=float(a_star),
                        b_star=float(b_star))


def predictive(post: NIGPosterior, x_new: np.ndarray) -> PredictiveT:
    """Student-t posterior predictive at a single input row."""
    x = np.asarray(x_new, dtype=float).ravel()
    if x.shape[0] != post.mu_star.shape[0]:
        raise ValidationError("input dimension does not match the posterior")
    loc = float(x @ post.mu_star)
    quad = float(x @ post.Sigma_star @ x)
    scale2 = (post.b_star / post.a_star) * (1.0 + quad)
    return PredictiveT(dof=2.0 * post.a_star, location=loc, scale2=float(scale2))


def gaussian_relax(t: PredictiveT) -> PredictiveGaussian:
    """Moment-matched Gaussian: variance uses b*/(a*-1) in place of b*/a*."""
    a_star = 0.5 * t.dof
    if a_star <= 1.0:
        raise ValidationError("Gaussian relaxation requires a* > 1")
    return PredictiveGaussian(mean=t.location,
                              variance=t.scale2 * a_star / (a_star - 1.0))


def kl_predictive(after: PredictiveGaussian, before: PredictiveGaussian) -> float:
    """KL(after || before) between the two Gaussian predictives."""
    va, vb = after.variance, before.variance
    if va <= 0 or vb <= 0:
        raise ValidationError("predictive variances must be positive")
    dm = after.mean - before.mean
    return float(0.5 * np.log(vb / va) + dm * dm / (2.0 * vb) + va / (2.0 * vb) - 0.5)


def _predictive_gaussians(state: ModelState, X: np.ndarray):
    """Vectorized relaxed predictives for every row of X."""
    post = state.posterior
    a_star = post.a_star
    if a_star <= 1.0:
        raise ValidationError("Gaussian relaxation requires a* > 1")
    means = X @ post.mu_star
    quads = np.einsum("ij,jk,ik->i", X, post.Sigma_star, X)
    variances = (post.b_star / (a_star - 1.0)) * (1.0 + quads)
    return means, variances


def sum_kl_over_training(state_after: ModelState, state_before: ModelState,
                         ds: Dataset) -> float:
    """Sum of per-training-row predictive KLs between the two states."""
    ma, va = _predictive_gaussians(state_after, ds.X)
    mb, vb = _predictive_gaussians(state_before, ds.X)
    dm = ma - mb
    kl = 0.5 * np.log(vb / va) + dm * dm / (2.0 * vb) + va / (2.0 * vb) - 0.5
    return float(kl.sum())


def build_state(ds: Dataset, U: MetaFeatureMatrix, hp: HyperParameters,
                result: MapResult, feedbacks: Sequence[FeedbackRecord],
                jitter: float = DEFAULT_JITTER) -> ModelState:
    """Assemble the covariance and NIG posterior implied by a MAP result."""
    K = build_covariance(U, result.gamma, jitter)
    post = nig_posterior(ds, K, result.tau2, hp)
    return ModelState(gamma=np.asarray(result.gamma, dtype=float),
                      tau2=result.tau2, xi=result.xi, K=K, posterior=post,
                      feedbacks=tuple(feedbacks))
