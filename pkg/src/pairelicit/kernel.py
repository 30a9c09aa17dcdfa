"""Gaussian kernel over meta-features and the prior covariance it induces.

The covariance between two regression weights is
``exp(-0.5 * sum_l gamma_l * (u_il - u_jl)^2)`` where ``gamma`` is the vector
of inverse length scales.  A zero entry in ``gamma`` makes that descriptor
dimension irrelevant to similarity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, LinAlgError

from .data import FactorizationError, MetaFeatureMatrix, ValidationError

DEFAULT_JITTER = 1e-8
MAX_JITTER = 1e-4


@dataclass(frozen=True)
class PairDescriptor:
    """Elementwise squared meta-feature difference for one feature pair."""

    i: int
    j: int
    w: np.ndarray


def pair_descriptor(U: MetaFeatureMatrix, i: int, j: int) -> PairDescriptor:
    """Squared difference vector between the descriptors of features i and j."""
    p = U.p
    if not (0 <= i < p and 0 <= j < p):
        raise ValidationError(f"pair ({i}, {j}) out of range for p={p}")
    if i == j:
        raise ValidationError("pair indices must be distinct")
    w = (U.U[i] - U.U[j]) ** 2
    w.setflags(write=False)
    return PairDescriptor(i=i, j=j, w=w)


def kernel_value(gamma: np.ndarray, w) -> float:
    """Gaussian kernel value in (0, 1]; equals 1 iff the weighted distance is 0."""
    gamma = np.asarray(gamma, dtype=float)
    if (gamma < 0).any():
        raise ValidationError("gamma entries must be nonnegative")
    wv = w.w if isinstance(w, PairDescriptor) else np.asarray(w, dtype=float)
    return float(np.exp(-0.5 * gamma @ wv))


def weighted_sq_distances(U: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Matrix of gamma-weighted squared distances between descriptor rows."""
    V = U * np.sqrt(gamma)
    sq = np.einsum("ij,ij->i", V, V)
    D = sq[:, None] + sq[None, :] - 2.0 * (V @ V.T)
    np.maximum(D, 0.0, out=D)
    return D


def build_covariance(U: MetaFeatureMatrix, gamma: np.ndarray,
                     jitter: float = DEFAULT_JITTER) -> np.ndarray:
    """Build the p x p prior covariance with unit diagonal plus jitter.

    The Gram matrix is PSD in exact arithmetic but duplicated descriptor rows
    make it numerically singular, so the jitter escalates tenfold (up to
    ``MAX_JITTER``) until a Cholesky factorization succeeds.
    """
    gamma = np.asarray(gamma, dtype=float)
    if (gamma < 0).any():
        raise ValidationError("gamma entries must be nonnegative")
    if jitter < 0:
        raise ValidationError("jitter must be nonnegative")
    D = weighted_sq_distances(U.U, gamma)
    K = np.exp(-0.5 * D)
    K = 0.5 * (K + K.T)  # exact symmetry
    p = K.shape[0]
    eps = jitter
    while True:
        K_j = K.copy()
        K_j[np.diag_indices(p)] = 1.0 + eps
        try:
            cholesky(K_j, lower=True)
            return K_j
        except LinAlgError:
            if eps == 0:
                eps = DEFAULT_JITTER
            elif eps * 10 <= MAX_JITTER:
                eps *= 10
            else:
                raise FactorizationError(
                    f"covariance not factorizable at jitter {eps:g}")


def chol_lower(A: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, converting failures to FactorizationError."""
    try:
        return cholesky(A, lower=True)
    except LinAlgError as exc:
        raise FactorizationError(str(exc)) from exc


class CovarianceCache:
    """Rebuilds K only when gamma changes; the build is the refit inner loop."""

    def __init__(self, U: MetaFeatureMatrix, jitter: float = DEFAULT_JITTER):
        self.U = U
        self.jitter = jitter
        self._gamma = None
        self._K = None

    def get(self, gamma: np.ndarray) -> np.ndarray:
        gamma = np.asarray(gamma, dtype=float)
        if self._gamma is None or not np.array_equal(gamma, self._gamma):
            self._K = build_covariance(self.U, gamma, self.jitter)
            self._gamma = gamma.copy()
        return self._K
