"""Core data model: datasets, meta-features, hyperparameters, feedback records.

All types are immutable after construction and safe to share across threads.
Feature indices are 0-based everywhere; any 1-based external file is converted
at the boundary by its loader.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np


class ElicitationError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(ElicitationError, ValueError):
    """Malformed or inconsistent input data."""


class FactorizationError(ElicitationError, RuntimeError):
    """A required Cholesky factorization failed even after jitter escalation."""


class Answer(str, Enum):
    SIMILAR = "similar"
    DISSIMILAR = "dissimilar"
    UNKNOWN = "unknown"


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """A design matrix with targets and (optional) standardization statistics."""

    X: np.ndarray
    y: np.ndarray
    feature_names: tuple
    standardized: bool = False
    col_means: Optional[np.ndarray] = None
    col_stds: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class MetaFeatureMatrix:
    """One descriptor row per feature; rows feed the covariance kernel."""

    U: np.ndarray

    @property
    def p(self) -> int:
        return self.U.shape[0]

    @property
    def d(self) -> int:
        return self.U.shape[1]

    def __post_init__(self):
        U = np.asarray(self.U, dtype=float)
        if U.ndim != 2 or U.shape[1] < 1:
            raise ValidationError("meta-feature matrix must be 2-d with d >= 1")
        if not np.isfinite(U).all():
            raise ValidationError("meta-feature matrix contains non-finite entries")
        object.__setattr__(self, "U", _freeze(U))


@dataclass(frozen=True)
class HyperParameters:
    """Fixed constants of the model.

    ``a_sigma, b_sigma`` parameterize the inverse-gamma prior on the noise
    variance; ``a_tau, b_tau`` the inverse-gamma prior on the prior scale;
    ``gamma0, delta`` the (location, variance) of the half-normal prior on
    each inverse length scale; ``m_xi, sigma2_xi`` the half-normal prior on
    the similarity threshold.  When ``tau2_fixed`` is set, the scale is held
    at that value and excluded from inference.
    """

    a_sigma: float = 2.0
    b_sigma: float = 7.0
    a_tau: float = 2.0
    b_tau: float = 4.0
    gamma0: float = 1.0
    delta: float = 0.5
    m_xi: float = 20.0
    sigma2_xi: float = 10.0
    tau2_fixed: Optional[float] = None

    def __post_init__(self):
        for name in ("a_sigma", "b_sigma", "a_tau", "b_tau", "delta", "sigma2_xi"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be strictly positive")
        if self.gamma0 < 0 or self.m_xi < 0:
            raise ValidationError("gamma0 and m_xi must be nonnegative")
        if self.tau2_fixed is not None and not self.tau2_fixed > 0:
            raise ValidationError("tau2_fixed must be strictly positive when set")


@dataclass(frozen=True, order=True)
class FeedbackRecord:
    """A queried feature pair with the expert's answer."""

    i: int
    j: int
    answer: Answer
    round: int = 0

    def __post_init__(self):
        if self.i == self.j:
            raise ValidationError("feedback pair must have distinct indices")
        if self.i > self.j:
            # canonical unordered-pair order
            i, j = self.j, self.i
            object.__setattr__(self, "i", i)
            object.__setattr__(self, "j", j)
        if self.round < 0:
            raise ValidationError("round index must be nonnegative")

    @property
    def pair(self) -> tuple:
        return (self.i, self.j)


def validate_dataset(X, y, names: Optional[Sequence[str]] = None) -> Dataset:
    """Check shapes and finiteness and wrap the inputs in a Dataset.

    Inputs are copied; the caller's arrays are never mutated.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2:
        raise ValidationError(f"X must be 2-d, got ndim={X.ndim}")
    n, p = X.shape
    if n < 1 or p < 1:
        raise ValidationError(f"X must have n >= 1 and p >= 1, got {X.shape}")
    if y.shape[0] != n:
        raise ValidationError(f"y has length {y.shape[0]} but X has {n} rows")
    bad = np.argwhere(~np.isfinite(X))
    if bad.size:
        r, c = bad[0]
        raise ValidationError(f"non-finite entry in X at row {r}, col {c}")
    bad = np.argwhere(~np.isfinite(y))
    if bad.size:
        raise ValidationError(f"non-finite entry in y at index {bad[0][0]}")
    if names is None:
        names = tuple(f"x{j}" for j in range(p))
    else:
        names = tuple(str(s) for s in names)
        if len(names) != p:
            raise ValidationError(f"{len(names)} feature names for {p} columns")
    return Dataset(X=_freeze(X.copy()), y=_freeze(y.copy()), feature_names=names)


def standardize(ds: Dataset) -> Dataset:
    """Z-score each column with the population convention (divide by n).

    Zero-variance columns are centered only and their std is recorded as 1 so
    the column stays inert downstream.
    """
    if ds.standardized:
        raise ValidationError("dataset is already standardized")
    means = ds.X.mean(axis=0)
    stds = ds.X.std(axis=0)  # population convention, ddof=0
    stds = np.where(stds > 0, stds, 1.0)
    Xs = (ds.X - means) / stds
    return replace(ds, X=_freeze(Xs), standardized=True,
                   col_means=_freeze(means), col_stds=_freeze(stds))


def apply_standardization(ds_stats: Dataset, X_new) -> np.ndarray:
    """Standardize new rows with the statistics stored on a training dataset."""
    if not ds_stats.standardized:
        raise ValidationError("reference dataset carries no standardization statistics")
    X_new = np.asarray(X_new, dtype=float)
    if X_new.ndim == 1:
        X_new = X_new[None, :]
    if X_new.shape[1] != ds_stats.p:
        raise ValidationError(
            f"column count mismatch: {X_new.shape[1]} vs {ds_stats.p}")
    return (X_new - ds_stats.col_means) / ds_stats.col_stds
