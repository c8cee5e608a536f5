"""Singular-value machinery: thin SVD, trace/spectral norms, soft-thresholding, spectral-ball projection."""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .tensor_core import Matrix

logger = logging.getLogger(__name__)

# --- CONFIGURATION ---
# Singular values below RANK_FLOOR * sigma_1 count as zero when reporting rank.
RANK_FLOOR = 1e-12


class SvdError(RuntimeError):
    """The underlying SVD did not converge."""


@dataclass(frozen=True, eq=False)
class SvdFactors:
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    def recompose(self, s: np.ndarray = None) -> Matrix:
        """U diag(s) V^T, with s defaulting to the stored singular values."""
        s = self.S if s is None else s
        return (self.U * s) @ self.V.T


def _as_matrix(M) -> Matrix:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError(f"Expected a matrix, got an array of shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("Matrix entries must be finite")
    return M


def svd_thin(M) -> SvdFactors:
    """Thin SVD with min(rows, cols) singular values, sorted nonincreasing."""
    M = _as_matrix(M)
    try:
        U, s, Vt = scipy.linalg.svd(M, full_matrices=False, lapack_driver="gesdd", check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
        # gesdd occasionally fails where the slower QR-iteration driver succeeds
        logger.warning(f"gesdd failed on a {M.shape} matrix ({e}); retrying with gesvd")
        try:
            U, s, Vt = scipy.linalg.svd(M, full_matrices=False, lapack_driver="gesvd", check_finite=False)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e2:
            raise SvdError(f"SVD did not converge on a {M.shape} matrix: {e2}") from e2
    return SvdFactors(U, s, Vt.T)


def singular_values(M) -> np.ndarray:
    M = _as_matrix(M)
    try:
        return scipy.linalg.svdvals(M, check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
        raise SvdError(f"SVD did not converge on a {M.shape} matrix: {e}") from e


def numerical_rank(s: np.ndarray, rel_tol: float = RANK_FLOOR) -> int:
    s = np.asarray(s, dtype=float)
    if s.size == 0 or s[0] <= 0:
        return 0
    return int(np.count_nonzero(s > rel_tol * s[0]))


def trace_norm(M) -> float:
    return float(np.sum(singular_values(M)))


def spectral_norm(M) -> float:
    s = singular_values(M)
    return float(s[0]) if s.size else 0.0


def prox_trace(M, t: float) -> Matrix:
    """argmin_X 1/2 ||X - M||_F^2 + t ||X||_*."""
    if t < 0:
        raise ValueError(f"Threshold must be nonnegative, got {t}")
    f = svd_thin(M)
    s = np.maximum(f.S - t, 0.0)
    keep = s > 0
    # only the surviving singular triplets contribute
    return (f.U[:, keep] * s[keep]) @ f.V[:, keep].T


def project_spectral_ball(M, t: float) -> Matrix:
    """Projection onto {X : ||X|| <= t}."""
    if t < 0:
        raise ValueError(f"Radius must be nonnegative, got {t}")
    M = _as_matrix(M)
    f = svd_thin(M)
    if f.S.size == 0 or f.S[0] <= t:
        return M.copy()
    return f.recompose(np.minimum(f.S, t))
