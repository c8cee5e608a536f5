"""
Interpretation of completed tensors: rank detection, Tucker extraction,
CP (PARAFAC) fitting of the small core, and recombination of the two into
full-size CP factors.
"""

import logging
from dataclasses import dataclass, field
from functools import reduce
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg

from .solvers import Solution
from .spectral_ops import singular_values, svd_thin
from .tensor_core import DenseTensor, Matrix, ShapeError, as_array, fold_array, mode_product, unfold_array

logger = logging.getLogger(__name__)

# --- CONFIGURATION ---
DEFAULT_REL_TOL = 0.01
ORTHONORMAL_TOL = 1e-8
UNIT_NORM_TOL = 1e-8


class EmptyModelError(ValueError):
    """A mode was detected to have rank zero."""


@dataclass(frozen=True, eq=False)
class TuckerModel:
    core: DenseTensor
    factors: Tuple[Matrix, ...]

    def __post_init__(self):
        factors = tuple(np.asarray(U, dtype=float) for U in self.factors)
        if len(factors) != self.core.ndim:
            raise ShapeError(f"Core has {self.core.ndim} modes but {len(factors)} factors were given")
        for k, U in enumerate(factors):
            if U.ndim != 2 or U.shape[1] != self.core.shape[k]:
                raise ShapeError(f"Factor {k} has shape {U.shape}, core extent is {self.core.shape[k]}")
            if not np.allclose(U.T @ U, np.eye(U.shape[1]), atol=ORTHONORMAL_TOL, rtol=0):
                raise ValueError(f"Factor {k} does not have orthonormal columns")
        object.__setattr__(self, "factors", factors)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(U.shape[0] for U in self.factors)

    @property
    def ranks(self) -> Tuple[int, ...]:
        return self.core.shape


@dataclass(frozen=True, eq=False)
class CpModel:
    weights: np.ndarray
    factors: Tuple[Matrix, ...]
    fit_history: Tuple[float, ...] = field(default=())

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float).ravel()
        factors = tuple(np.asarray(A, dtype=float) for A in self.factors)
        R = weights.size
        if not factors:
            raise ShapeError("A CP model needs at least one factor")
        for k, A in enumerate(factors):
            if A.ndim != 2 or A.shape[1] != R:
                raise ShapeError(f"Factor {k} has shape {A.shape}, expected {R} columns")
            norms = np.linalg.norm(A, axis=0)
            if not np.allclose(norms, 1.0, atol=UNIT_NORM_TOL, rtol=0):
                raise ValueError(f"Columns of factor {k} must have unit norm")
        if np.any(weights < 0) or np.any(np.diff(weights) > 0):
            raise ValueError("CP weights must be nonnegative and sorted nonincreasing")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "fit_history", tuple(float(f) for f in self.fit_history))

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(A.shape[0] for A in self.factors)

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def fit(self) -> Optional[float]:
        return self.fit_history[-1] if self.fit_history else None


@dataclass(frozen=True)
class CpOptions:
    max_sweeps: int = 500
    fit_tol: float = 1e-8
    seed: int = 0
    restarts: int = 1

    def __post_init__(self):
        if self.max_sweeps < 1:
            raise ValueError(f"max_sweeps must be >= 1, got {self.max_sweeps}")
        if self.fit_tol < 0:
            raise ValueError(f"fit_tol must be >= 0, got {self.fit_tol}")
        if self.restarts < 1:
            raise ValueError(f"restarts must be >= 1, got {self.restarts}")


def detect_ranks(Z: Sequence[Matrix], rel_tol: float = DEFAULT_REL_TOL) -> Tuple[int, ...]:
    """r_k = number of singular values of Z_k above rel_tol * sigma_1(Z_k)."""
    if not 0 < rel_tol < 1:
        raise ValueError(f"rel_tol must lie in (0, 1), got {rel_tol}")
    ranks = []
    for Zk in Z:
        s = singular_values(Zk)
        ranks.append(int(np.count_nonzero(s > rel_tol * s[0])) if s.size and s[0] > 0 else 0)
    return tuple(ranks)


def _rank_sources(solution: Solution) -> List[Matrix]:
    """Matrices whose left singular vectors span each mode of the estimate."""
    X = solution.X_hat.data
    if solution.method == "constraint":
        return list(solution.components)
    sources = [unfold_array(X, k) for k in range(X.ndim)]
    if solution.method == "matrix":
        sources[solution.mode] = solution.components[0]
    return sources


def extract_tucker(solution: Solution, rel_tol: float = DEFAULT_REL_TOL) -> TuckerModel:
    """
    Tucker factors from the left singular vectors of the auxiliary matrices
    (mode unfoldings of the estimate where a method has none), core by
    projecting the estimate onto them.
    """
    sources = _rank_sources(solution)
    ranks = detect_ranks(sources, rel_tol)
    if any(r == 0 for r in ranks):
        raise EmptyModelError(f"Detected ranks {ranks}: the estimate is zero in some mode")
    factors = tuple(svd_thin(Zk).U[:, :r] for Zk, r in zip(sources, ranks))
    core = solution.X_hat
    for k, U in enumerate(factors):
        core = mode_product(core, U.T, k)
    logger.info(f"Tucker core of dimension {'x'.join(str(r) for r in ranks)}")
    return TuckerModel(core, factors)


def _khatri_rao_except(factors: Sequence[Matrix], k: int) -> Matrix:
    """Khatri-Rao product matching the column order of the mode-k unfolding."""
    K = len(factors)
    order = [(k + 1 + j) % K for j in range(K - 1)]
    if not order:
        return np.ones((1, factors[k].shape[1]))
    # the first-listed mode varies fastest, so it goes last in the Kronecker order
    return reduce(scipy.linalg.khatri_rao, [factors[m] for m in reversed(order)])


def _cp_full(weights: np.ndarray, factors: Sequence[Matrix]) -> np.ndarray:
    shape = tuple(A.shape[0] for A in factors)
    X0 = (factors[0] * weights) @ _khatri_rao_except(factors, 0).T
    return fold_array(X0, 0, shape)


def _normalize_columns(A: Matrix) -> Tuple[Matrix, np.ndarray]:
    norms = np.linalg.norm(A, axis=0)
    safe = np.where(norms > 0, norms, 1.0)
    A = A / safe
    # a vanished column is replaced by a unit vector so the model stays valid
    for j in np.flatnonzero(norms == 0):
        A[:, j] = 0.0
        A[0, j] = 1.0
    return A, norms


def _arrange(weights: np.ndarray, factors: Sequence[Matrix]) -> Tuple[np.ndarray, List[Matrix]]:
    """Sort components by weight and fix signs: largest-magnitude entry positive in all but the last mode."""
    order = np.argsort(-weights, kind="stable")
    weights = weights[order]
    factors = [A[:, order].copy() for A in factors]
    for j in range(weights.size):
        flips = 1.0
        for A in factors[:-1]:
            pivot = A[np.argmax(np.abs(A[:, j])), j]
            if pivot < 0:
                A[:, j] *= -1.0
                flips *= -1.0
        factors[-1][:, j] *= flips
    return weights, factors


def _cp_als_once(G: np.ndarray, R: int, opts: CpOptions, rng: np.random.Generator) -> CpModel:
    K = G.ndim
    norm_G = float(np.linalg.norm(G.ravel()))
    factors = [_normalize_columns(rng.standard_normal((n, R)))[0] for n in G.shape]
    weights = np.ones(R)
    unfoldings = [unfold_array(G, k) for k in range(K)]
    fits = []
    for sweep in range(opts.max_sweeps):
        for k in range(K):
            gram = np.ones((R, R))
            for m in range(K):
                if m != k:
                    gram *= factors[m].T @ factors[m]
            mttkrp = unfoldings[k] @ _khatri_rao_except(factors, k)
            A = mttkrp @ np.linalg.pinv(gram)
            if not np.all(np.isfinite(A)):
                raise FloatingPointError(f"Non-finite factor in ALS sweep {sweep}, mode {k}")
            factors[k], weights = _normalize_columns(A)
        residual = float(np.linalg.norm((G - _cp_full(weights, factors)).ravel()))
        fit = 1.0 - residual / norm_G if norm_G > 0 else 1.0 - residual
        fits.append(fit)
        logger.debug(f"ALS sweep {sweep}: fit={fit:.10f}")
        if sweep > 0 and abs(fits[-1] - fits[-2]) < opts.fit_tol:
            break
    weights, factors = _arrange(weights, factors)
    return CpModel(weights, tuple(factors), tuple(fits))


def cp_als(G: Union[DenseTensor, np.ndarray], R: int, opts: CpOptions = None) -> CpModel:
    """
    Fit an R-component CP model to a complete tensor by alternating least squares.

    Factors start from seeded standard-normal draws; with ``opts.restarts > 1``
    the best-fitting of that many independent runs is returned.
    """
    opts = opts or CpOptions()
    G = as_array(G)
    if R < 1:
        raise ValueError(f"Number of components must be >= 1, got {R}")
    if R > min(G.shape):
        logger.warning(f"{R} components exceed the smallest extent {min(G.shape)} of the tensor")
    best = None
    for r, child in enumerate(np.random.SeedSequence(opts.seed).spawn(opts.restarts)):
        model = _cp_als_once(G, R, opts, np.random.default_rng(child))
        logger.info(f"cp_als run {r + 1}/{opts.restarts}: fit={model.fit:.6f} after {len(model.fit_history)} sweeps")
        if best is None or model.fit > best.fit:
            best = model
    return best


def combine_factors(tucker: TuckerModel, cp: CpModel) -> CpModel:
    """Full-size CP model with mode-k factor U_k A^(k), column norms folded into the weights."""
    if tucker.ranks != cp.shape:
        raise ShapeError(f"CP model of shape {cp.shape} was not fitted on a core of shape {tucker.ranks}")
    weights = cp.weights.copy()
    factors = []
    for U, A in zip(tucker.factors, cp.factors):
        B, norms = _normalize_columns(U @ A)
        weights = weights * norms
        factors.append(B)
    weights, factors = _arrange(weights, factors)
    return CpModel(weights, tuple(factors), cp.fit_history)


def reconstruct(model: Union[TuckerModel, CpModel]) -> DenseTensor:
    if isinstance(model, TuckerModel):
        X = model.core
        for k, U in enumerate(model.factors):
            X = mode_product(X, U, k)
        return X
    if isinstance(model, CpModel):
        return DenseTensor(_cp_full(model.weights, model.factors))
    raise TypeError(f"Cannot reconstruct a {type(model).__name__}")


def cp_to_tucker(cp: CpModel) -> TuckerModel:
    """Ortho-normalize each CP factor by QR; the triangular parts form the core."""
    Qs, Rs = zip(*(np.linalg.qr(A) for A in cp.factors))
    core = DenseTensor(_cp_full(cp.weights, Rs))
    return TuckerModel(core, tuple(Qs))


def interpret(solution: Solution, n_components: int, rel_tol: float = DEFAULT_REL_TOL,
              opts: CpOptions = None) -> Tuple[TuckerModel, CpModel, CpModel]:
    """Tucker extraction, CP on the core, recombination. Returns (tucker, core_cp, full_cp)."""
    tucker = extract_tucker(solution, rel_tol)
    core_cp = cp_als(tucker.core, n_components, opts)
    return tucker, core_cp, combine_factors(tucker, core_cp)
