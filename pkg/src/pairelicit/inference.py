"""MAP estimation of (gamma, tau2, xi).

The regression weights and noise variance are marginalized out analytically,
leaving a multivariate Student-t marginal likelihood over the n observations
(computed through an n x n Cholesky factorization), plus the Bernoulli
feedback likelihood and half-normal / inverse-gamma priors.  The optimizer is
limited-memory quasi-Newton over log-transformed coordinates with analytic
gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.special import gammaln
from scipy.stats import norm

from .data import Dataset, HyperParameters, MetaFeatureMatrix, ValidationError
from .feedback import (FeedbackLikelihoodTerm, feedback_log_likelihood_grad,
                       terms_from_records)
from .kernel import DEFAULT_JITTER, build_covariance, chol_lower

LOG_FLOOR = 1e-8  # floor for log-transformed nonnegative coordinates


@dataclass(frozen=True)
class FitSettings:
    """Optimizer budgets and numerical knobs, exposed through config."""

    gtol: float = 1e-6
    max_iter: int = 500
    warm_max_iter: int = 50
    jitter: float = DEFAULT_JITTER
    seed: int = 0


@dataclass(frozen=True)
class ObjectiveValue:
    log_posterior: float
    gradient: np.ndarray  # over unconstrained (log) coordinates
    components: dict


@dataclass(frozen=True)
class MapResult:
    gamma: np.ndarray
    tau2: float
    xi: float
    converged: bool
    iterations: int
    final_grad_norm: float
    log_posterior: float = float("nan")


def _half_normal_logpdf(x, loc, var):
    """Normal(loc, var) truncated to [0, inf) and renormalized."""
    z = norm.logpdf(x, loc=loc, scale=np.sqrt(var))
    log_norm = norm.logcdf(loc / np.sqrt(var))  # P(X >= 0) = Phi(loc/sd)
    return z - log_norm


def _inv_gamma_logpdf(x, a, b):
    return a * np.log(b) - gammaln(a) - (a + 1) * np.log(x) - b / x


def marginal_log_likelihood(ds: Dataset, K: np.ndarray, tau2: float,
                            hp: HyperParameters) -> float:
    """Log density of the marginalized observation model at the training targets."""
    if tau2 <= 0:
        raise ValidationError("tau2 must be strictly positive")
    value, _, _ = _marginal_value_pieces(ds.X, ds.y, K, tau2, hp)
    return value


def _marginal_value_pieces(X, y, K, tau2, hp):
    """Value of the marginal log-likelihood plus the pieces its gradient needs.

    Returns ``(value, G, Sigma_deriv_tau)`` where ``G = dL/dSigma`` (n x n,
    symmetric) and ``Sigma_deriv_tau = X K X^T``.
    """
    n = X.shape[0]
    XK = X @ K
    XKXt = XK @ X.T
    Sigma = tau2 * XKXt
    Sigma[np.diag_indices(n)] += 1.0
    L = chol_lower(Sigma)
    logdet = 2.0 * np.log(np.diag(L)).sum()
    alpha = cho_solve((L, True), y)
    q = float(y @ alpha)
    a, b = hp.a_sigma, hp.b_sigma
    value = (-0.5 * n * np.log(2.0 * np.pi)
             + gammaln(a + 0.5 * n) - gammaln(a) + a * np.log(b)
             - 0.5 * logdet - (a + 0.5 * n) * np.log(b + 0.5 * q))
    # dL/dSigma = -1/2 Sigma^-1 + 1/2 c alpha alpha^T
    Linv = solve_triangular(L, np.eye(n), lower=True)
    Sigma_inv = Linv.T @ Linv
    c = (a + 0.5 * n) / (b + 0.5 * q)
    G = -0.5 * Sigma_inv + 0.5 * c * np.outer(alpha, alpha)
    return float(value), G, XKXt


class _Objective:
    """Negative log posterior over unconstrained coordinates, with gradient.

    Coordinate layout: ``[log gamma (d), log tau2 (absent when fixed), log xi]``.
    """

    def __init__(self, ds: Dataset, U: MetaFeatureMatrix,
                 terms: Sequence[FeedbackLikelihoodTerm],
                 hp: HyperParameters, jitter: float = DEFAULT_JITTER):
        self.ds = ds
        self.U = U
        self.terms = list(terms)
        self.hp = hp
        self.jitter = jitter
        self.d = U.d
        self.tau2_free = hp.tau2_fixed is None

    @property
    def n_coords(self) -> int:
        return self.d + (1 if self.tau2_free else 0) + 1

    def pack(self, gamma, tau2, xi) -> np.ndarray:
        parts = [np.log(np.maximum(gamma, LOG_FLOOR))]
        if self.tau2_free:
            parts.append([np.log(max(tau2, LOG_FLOOR))])
        parts.append([np.log(max(xi, LOG_FLOOR))])
        return np.concatenate([np.atleast_1d(np.asarray(p, dtype=float)) for p in parts])

    def unpack(self, x: np.ndarray):
        gamma = np.exp(x[:self.d])
        if self.tau2_free:
            tau2 = float(np.exp(x[self.d]))
        else:
            tau2 = float(self.hp.tau2_fixed)
        xi = float(np.exp(x[-1]))
        return gamma, tau2, xi

    def bounds(self):
        lo = np.log(LOG_FLOOR)
        b = [(lo, 50.0)] * self.d
        if self.tau2_free:
            b.append((np.log(1e-10), 50.0))
        b.append((lo, 50.0))
        return b

    def evaluate(self, gamma, tau2, xi) -> ObjectiveValue:
        hp, Um = self.hp, self.U.U
        K = build_covariance(self.U, gamma, self.jitter)
        marg, G, XKXt = _marginal_value_pieces(self.ds.X, self.ds.y, K, tau2, hp)

        # marginal-likelihood gradient w.r.t. gamma via B = (X'GX) o K
        M = self.ds.X.T @ G @ self.ds.X
        B = M * K
        bsum = B.sum(axis=1)
        term1 = (Um ** 2).T @ bsum
        term2 = np.einsum("il,il->l", Um, B @ Um)
        g_gamma = -tau2 * (term1 - term2)
        g_tau2 = float((G * XKXt).sum())

        fb, fb_g_gamma, fb_g_xi = feedback_log_likelihood_grad(gamma, xi, self.terms)

        pg = float(_half_normal_logpdf(gamma, hp.gamma0, hp.delta).sum())
        pg_grad = -(gamma - hp.gamma0) / hp.delta
        px = float(_half_normal_logpdf(xi, hp.m_xi, hp.sigma2_xi))
        px_grad = -(xi - hp.m_xi) / hp.sigma2_xi
        if self.tau2_free:
            pt = float(_inv_gamma_logpdf(tau2, hp.a_tau, hp.b_tau))
            pt_grad = -(hp.a_tau + 1.0) / tau2 + hp.b_tau / tau2 ** 2
        else:
            pt = 0.0
            pt_grad = 0.0

        components = {
            "marginal_ll": marg,
            "feedback_ll": fb,
            "prior_gamma": pg,
            "prior_tau2": pt,
            "prior_xi": px,
        }
        total = marg + fb + pg + pt + px

        d_gamma = g_gamma + fb_g_gamma + pg_grad
        d_xi = fb_g_xi + px_grad
        grads = [d_gamma * gamma]  # chain rule to log coordinates
        if self.tau2_free:
            grads.append([(g_tau2 + pt_grad) * tau2])
        grads.append([d_xi * xi])
        gradient = np.concatenate([np.atleast_1d(np.asarray(g)) for g in grads])
        return ObjectiveValue(log_posterior=float(total), gradient=gradient,
                              components=components)

    def neg_value_grad(self, x: np.ndarray):
        gamma, tau2, xi = self.unpack(x)
        ov = self.evaluate(gamma, tau2, xi)
        return -ov.log_posterior, -ov.gradient


def log_posterior(ds: Dataset, U: MetaFeatureMatrix, feedbacks,
                  hp: HyperParameters, gamma, tau2: float, xi: float,
                  jitter: float = DEFAULT_JITTER) -> ObjectiveValue:
    """Log posterior of (gamma, tau2, xi) with its unconstrained-coordinate gradient."""
    gamma = np.asarray(gamma, dtype=float)
    if (gamma < 0).any() or tau2 <= 0 or xi < 0:
        raise ValidationError("require gamma >= 0, tau2 > 0, xi >= 0")
    terms = terms_from_records(U, feedbacks)
    obj = _Objective(ds, U, terms, hp, jitter)
    if hp.tau2_fixed is not None and not np.isclose(tau2, hp.tau2_fixed):
        raise ValidationError("tau2 argument conflicts with tau2_fixed")
    return obj.evaluate(gamma, tau2, xi)


def default_init(hp: HyperParameters, d: int) -> MapResult:
    gamma0 = np.full(d, max(hp.gamma0, 1e-2))
    tau2 = hp.tau2_fixed if hp.tau2_fixed is not None else hp.b_tau / (hp.a_tau + 1.0)
    return MapResult(gamma=gamma0, tau2=float(tau2), xi=max(hp.m_xi, 1e-2),
                     converged=False, iterations=0, final_grad_norm=np.inf)


def fit_map(ds: Dataset, U: MetaFeatureMatrix, feedbacks,
            hp: HyperParameters, init: Optional[MapResult] = None,
            settings: Optional[FitSettings] = None,
            warm_start: bool = False) -> MapResult:
    """Maximize the log posterior with L-BFGS-B over log coordinates.

    Deterministic given the init; ``warm_start=True`` switches to the reduced
    iteration budget used for hypothetical-feedback refits inside the utility
    scan.  Non-convergence is reported through ``converged=False``, never
    raised.
    """
    settings = settings or FitSettings()
    if init is None:
        init = default_init(hp, U.d)
    terms = terms_from_records(U, feedbacks)
    obj = _Objective(ds, U, terms, hp, settings.jitter)
    x0 = obj.pack(init.gamma, init.tau2, init.xi)
    maxiter = settings.warm_max_iter if warm_start else settings.max_iter
    res = minimize(obj.neg_value_grad, x0, jac=True, method="L-BFGS-B",
                   bounds=obj.bounds(),
                   options={"maxiter": maxiter, "gtol": settings.gtol,
                            "ftol": 1e-14})
    gamma, tau2, xi = obj.unpack(res.x)
    grad_norm = float(np.max(np.abs(res.jac)))
    converged = bool(res.success) or grad_norm <= settings.gtol
    return MapResult(gamma=gamma, tau2=tau2, xi=xi, converged=converged,
                     iterations=int(res.nit), final_grad_norm=grad_norm,
                     log_posterior=float(-res.fun))
