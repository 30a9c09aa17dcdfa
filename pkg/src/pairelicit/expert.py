"""Simulated experts that answer pairwise similarity queries.

The real-data expert is a LASSO model fit on a held-out "expert" split:
features with coefficients of the same nonzero sign are similar, opposite
nonzero signs are dissimilar, and any pair touching a zero coefficient gets
"I don't know".  The synthetic-data oracle answers from known group
membership instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data import Answer, Dataset, ValidationError


@dataclass(frozen=True)
class ExpertOracle:
    """Sign-based oracle from sparse regression coefficients."""

    coef: np.ndarray
    feature_names: tuple = ()

    @property
    def sign_class(self) -> np.ndarray:
        return np.sign(self.coef).astype(int)

    def answer(self, i: int, j: int) -> Answer:
        if i == j:
            raise ValidationError("pair indices must be distinct")
        si, sj = self.sign_class[i], self.sign_class[j]
        if si == 0 or sj == 0:
            return Answer.UNKNOWN
        return Answer.SIMILAR if si == sj else Answer.DISSIMILAR

    def unknown_features(self) -> np.ndarray:
        """Indices whose pairs the oracle cannot evaluate."""
        return np.flatnonzero(self.sign_class == 0)

    def save(self, path) -> None:
        """Flat text table: feature name, coefficient, sign class."""
        names = self.feature_names or tuple(f"x{j}" for j in range(len(self.coef)))
        with open(path, "w", encoding="utf-8") as fh:
            for name, c, s in zip(names, self.coef, self.sign_class):
                label = {1: "positive", -1: "negative", 0: "zero"}[int(s)]
                fh.write(f"{name}\t{c:.17g}\t{label}\n")

    @classmethod
    def load(cls, path) -> "ExpertOracle":
        names, coefs = [], []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise ValidationError(f"malformed oracle row at line {lineno}")
                names.append(parts[0])
                coefs.append(float(parts[1]))
        coef = np.asarray(coefs, dtype=float)
        coef.setflags(write=False)
        return cls(coef=coef, feature_names=tuple(names))


@dataclass(frozen=True)
class GroupOracle:
    """Ground-truth oracle for synthetic data: same group means similar."""

    labels: np.ndarray

    @classmethod
    def from_group_sizes(cls, group_sizes: Sequence[int]) -> "GroupOracle":
        labels = np.repeat(np.arange(len(group_sizes)), group_sizes)
        labels.setflags(write=False)
        return cls(labels=labels)

    def answer(self, i: int, j: int) -> Answer:
        if i == j:
            raise ValidationError("pair indices must be distinct")
        return Answer.SIMILAR if self.labels[i] == self.labels[j] else Answer.DISSIMILAR


def soft_threshold(z: float, t: float) -> float:
    return float(np.sign(z) * max(abs(z) - t, 0.0))


def fit_lasso(X, y, lam: float, l1_ratio: float = 1.0,
              max_sweeps: int = 10000, tol: float = 1e-10) -> np.ndarray:
    """Coordinate descent for (1/2n)||y - Xb||^2 + lam*(a|b|_1 + (1-a)/2 |b|_2^2).

    ``l1_ratio`` is the L1 share a; 1.0 gives the LASSO, 0.0 pure ridge via
    the same sweep.  Converges on the max coefficient change per sweep;
    raises on non-convergence.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if lam < 0 or not 0.0 <= l1_ratio <= 1.0:
        raise ValidationError("require lam >= 0 and l1_ratio in [0, 1]")
    n, p = X.shape
    col_sq = np.einsum("ij,ij->j", X, X) / n
    beta = np.zeros(p)
    r = y.copy()
    l1 = lam * l1_ratio
    l2 = lam * (1.0 - l1_ratio)
    for _ in range(max_sweeps):
        max_delta = 0.0
        for j in range(p):
            if col_sq[j] == 0.0:
                continue
            old = beta[j]
            rho = (X[:, j] @ r) / n + col_sq[j] * old
            new = soft_threshold(rho, l1) / (col_sq[j] + l2)
            if new != old:
                r -= X[:, j] * (new - old)
                beta[j] = new
                max_delta = max(max_delta, abs(new - old))
        if max_delta <= tol * max(1.0, np.abs(beta).max()):
            return beta
    raise ValidationError(f"coordinate descent did not converge in {max_sweeps} sweeps")


def lasso_lambda_max(X, y, l1_ratio: float = 1.0) -> float:
    """Smallest penalty at which every coefficient is exactly zero."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n = X.shape[0]
    lmax = float(np.abs(X.T @ y).max() / n)
    return lmax / max(l1_ratio, 1e-3)


def cross_validate_lambda(X, y, lambdas, folds: int = 5, l1_ratio: float = 1.0,
                          seed: int = 0) -> float:
    """Penalty with smallest mean held-out squared error over k folds."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n = X.shape[0]
    if folds < 2 or folds > n:
        raise ValidationError(f"cannot make {folds} folds from {n} rows")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    fold_ids = np.arange(n) % folds
    errors = np.zeros(len(lambdas))
    for k in range(folds):
        test = order[fold_ids == k]
        train = order[fold_ids != k]
        for li, lam in enumerate(lambdas):
            beta = fit_lasso(X[train], y[train], lam, l1_ratio=l1_ratio)
            resid = y[test] - X[test] @ beta
            errors[li] += float(resid @ resid) / len(test)
    return float(lambdas[int(np.argmin(errors))])


def default_lambda_grid(X, y, num: int = 50, ratio: float = 1e-3) -> np.ndarray:
    lmax = lasso_lambda_max(X, y)
    if lmax == 0.0:
        return np.zeros(1)
    return np.geomspace(lmax, ratio * lmax, num)


def build_expert(expert_ds: Dataset, lambda_grid=None, folds: int = 5,
                 seed: int = 0) -> ExpertOracle:
    """Fit the LASSO expert with a cross-validated penalty."""
    X, y = expert_ds.X, expert_ds.y
    if lambda_grid is None:
        lambda_grid = default_lambda_grid(X, y)
    if np.allclose(y, 0.0):
        coef = np.zeros(expert_ds.p)
    else:
        lam = cross_validate_lambda(X, y, lambda_grid, folds=folds, seed=seed)
        coef = fit_lasso(X, y, lam)
    coef.setflags(write=False)
    return ExpertOracle(coef=coef, feature_names=expert_ds.feature_names)
