"""
ADMM solvers for trace-norm regularized tensor completion.

Three estimators share one iteration skeleton:

* ``matrix``     -- trace norm of a single mode-k unfolding ("as a matrix"),
* ``constraint`` -- weighted sum of the trace norms of all K unfoldings of one tensor,
* ``mixture``    -- the prediction is a sum of K tensors, each low-rank in its own mode.

Every solver stops on the relative duality gap (primal - best dual) / primal,
with the dual evaluated at a feasible point built from the current multipliers.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .spectral_ops import prox_trace, spectral_norm, trace_norm
from .tensor_core import (
    DenseTensor,
    Matrix,
    ObservationSet,
    ShapeError,
    as_array,
    fold_array,
    scatter_array,
    unfold_array,
)

logger = logging.getLogger(__name__)

# --- CONFIGURATION ---
METHODS = ("matrix", "constraint", "mixture")
# At lambda = 0 the loss is the indicator of Omega(x) = y, taken as met below this relative residual.
FEASIBILITY_TOL = 1e-9
# Observations with a smaller sample standard deviation are treated as constant.
STD_FLOOR = 1e-12


class SolverConfigError(ValueError):
    """Infeasible solver configuration or unusable observation set."""


@dataclass(frozen=True)
class SolverConfig:
    lam: float = 0.0
    gammas: Optional[Tuple[float, ...]] = None
    eta0: float = 0.1
    tol: float = 1e-3
    max_iter: int = 2000
    gap_interval: int = 1

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise SolverConfigError(f"lambda must be >= 0, got {self.lam}")
        if not np.isfinite(self.eta0) or self.eta0 <= 0:
            raise SolverConfigError(f"eta0 must be > 0, got {self.eta0}")
        if not 0 < self.tol < 1:
            raise SolverConfigError(f"tol must lie in (0, 1), got {self.tol}")
        if self.max_iter < 1:
            raise SolverConfigError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.gap_interval < 1:
            raise SolverConfigError(f"gap_interval must be >= 1, got {self.gap_interval}")
        if self.gammas is not None:
            gammas = tuple(float(g) for g in self.gammas)
            if not gammas or any(not np.isfinite(g) or g <= 0 for g in gammas):
                raise SolverConfigError(f"gammas must all be > 0, got {self.gammas}")
            object.__setattr__(self, "gammas", gammas)

    def gammas_for(self, K: int) -> np.ndarray:
        if self.gammas is None:
            return np.ones(K)
        if len(self.gammas) != K:
            raise SolverConfigError(f"Got {len(self.gammas)} gammas for a {K}-way problem")
        return np.array(self.gammas)

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "gammas": list(self.gammas) if self.gammas is not None else None,
            "eta0": self.eta0,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "gap_interval": self.gap_interval,
        }


@dataclass(frozen=True)
class GapRecord:
    iteration: int
    primal: float
    dual: float
    best_dual: float
    gap: Optional[float]


@dataclass
class Diagnostics:
    records: List[GapRecord] = field(default_factory=list)
    reason: str = "max_iter"
    iterations: int = 0
    eta: float = float("nan")
    elapsed: float = 0.0

    @property
    def converged(self) -> bool:
        return self.reason == "converged"

    @property
    def final_gap(self) -> Optional[float]:
        for rec in reversed(self.records):
            if rec.gap is not None:
                return rec.gap
        return None


@dataclass(frozen=True, eq=False)
class Solution:
    method: str
    X_hat: DenseTensor
    components: Tuple[Matrix, ...]
    multipliers: Tuple[np.ndarray, ...]
    diagnostics: Diagnostics
    mode: Optional[int] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.X_hat.shape


def relative_gap(p: float, d_best: float) -> Optional[float]:
    """(p - d_best) / p, or None when p is not a positive finite number."""
    if not np.isfinite(p) or p <= 0:
        return None
    return (p - d_best) / p


def step_size(y: np.ndarray, eta0: float, method: str) -> float:
    """eta0 / std(y) for matrix and constraint, std(y) / eta0 for the mixture."""
    y = np.asarray(y, dtype=float)
    std = float(np.std(y, ddof=1)) if y.size > 1 else 0.0
    if std < STD_FLOOR:
        logger.warning("Observed values are constant; using the unscaled step size")
        std = 1.0
    return std / eta0 if method == "mixture" else eta0 / std


def _loss(residual: np.ndarray, y: np.ndarray, lam: float) -> float:
    if lam > 0:
        return float(residual @ residual) / (2.0 * lam)
    scale = max(float(np.linalg.norm(y)), np.finfo(float).tiny)
    return 0.0 if np.linalg.norm(residual) / scale < FEASIBILITY_TOL else float("inf")


def primal_objective(method: str, obs: ObservationSet, cfg: SolverConfig, state, mode: int = 0) -> float:
    """
    Objective value of a primal state.

    `state` is the tensor x for the matrix and constraint methods and the
    sequence of K mode-k component matrices Z_k for the mixture.
    """
    K = len(obs.shape)
    y = obs.values
    if method == "matrix":
        x = as_array(state)
        reg = trace_norm(unfold_array(x, mode))
        pred = x
    elif method == "constraint":
        x = as_array(state)
        gammas = cfg.gammas_for(K)
        reg = sum(g * trace_norm(unfold_array(x, k)) for k, g in enumerate(gammas))
        pred = x
    elif method == "mixture":
        gammas = cfg.gammas_for(K)
        if len(state) != K:
            raise ShapeError(f"Mixture state needs {K} components, got {len(state)}")
        reg = sum(g * trace_norm(Z) for Z, g in zip(state, gammas))
        pred = sum(fold_array(Z, k, obs.shape) for k, Z in enumerate(state))
    else:
        raise ValueError(f"Unknown method: {method}")
    return _loss(pred[obs.index_tuple] - y, y, cfg.lam) + reg


def _shrinkage_factor(sigmas: Sequence[float], gammas: Sequence[float]) -> float:
    c = 1.0
    for s, g in zip(sigmas, gammas):
        if s > 0:
            c = min(c, g / s)
    return c


def dual_feasible_as_matrix(alpha: np.ndarray, obs: ObservationSet, mode: int) -> np.ndarray:
    """Zero the unobserved entries of a tensor-shaped multiplier, then shrink its mode unfolding into the unit spectral ball."""
    alpha = np.where(obs.mask(), as_array(alpha), 0.0)
    sigma = spectral_norm(unfold_array(alpha, mode))
    return alpha * _shrinkage_factor([sigma], [1.0])


def dual_feasible_constraint(alphas: Sequence[np.ndarray], obs: ObservationSet,
                             gammas: Sequence[float]) -> List[np.ndarray]:
    """Make the K multipliers cancel on unobserved entries, then scale all by c = min(1, gamma_k / sigma_k)."""
    K = len(alphas)
    unobserved = ~obs.mask()
    stacked = np.stack([as_array(a) for a in alphas])
    excess = stacked.sum(axis=0) / K
    projected = [np.where(unobserved, a - excess, a) for a in stacked]
    sigmas = [spectral_norm(unfold_array(a, k)) for k, a in enumerate(projected)]
    c = _shrinkage_factor(sigmas, gammas)
    return [c * a for a in projected]


def dual_feasible_mixture(alpha: np.ndarray, obs: ObservationSet, gammas: Sequence[float]) -> np.ndarray:
    """Scale the M-vector alpha so every unfolding of Omega^T alpha lies in its gamma_k spectral ball."""
    full = scatter_array(alpha, obs)
    sigmas = [spectral_norm(unfold_array(full, k)) for k in range(full.ndim)]
    return np.asarray(alpha, dtype=float) * _shrinkage_factor(sigmas, gammas)


def dual_objective(alpha_obs: np.ndarray, y: np.ndarray, lam: float) -> float:
    """-lam/2 ||u||^2 + y^T u, where u is the feasible dual restricted to observed entries."""
    return -0.5 * lam * float(alpha_obs @ alpha_obs) + float(y @ alpha_obs)


class _GapMonitor:
    """Tracks the best dual value and decides termination on the relative gap."""

    def __init__(self, tol: float, diagnostics: Diagnostics):
        self.tol = tol
        self.best_dual = -np.inf
        self.diag = diagnostics
        self.skipped = 0

    def record(self, iteration: int, primal: float, dual: float) -> bool:
        self.best_dual = max(self.best_dual, dual)
        gap = relative_gap(primal, self.best_dual)
        self.diag.records.append(GapRecord(iteration, primal, dual, self.best_dual, gap))
        if gap is None:
            self.skipped += 1
            logger.debug(f"iter {iteration}: gap not evaluable (primal={primal})")
            return False
        logger.debug(f"iter {iteration}: primal={primal:.6e} dual*={self.best_dual:.6e} gap={gap:.3e}")
        return gap < self.tol


def _check_problem(obs: ObservationSet, shape: Sequence[int]) -> Tuple[int, ...]:
    if obs is None or obs.size < 1:
        raise SolverConfigError("Empty observation set")
    shape = tuple(int(n) for n in shape)
    if shape != obs.shape:
        raise ShapeError(f"Problem shape {shape} does not match observation shape {obs.shape}")
    return shape


def _finish(monitor: _GapMonitor, diag: Diagnostics, method: str, iteration: int,
            converged: bool, started: float):
    diag.iterations = iteration
    diag.reason = "converged" if converged else "max_iter"
    diag.elapsed = time.perf_counter() - started
    if monitor.skipped:
        logger.debug(f"{method}: {monitor.skipped} records had a non-evaluable gap")
    if converged:
        logger.info(f"{method}: converged after {iteration} iterations (gap={diag.final_gap:.3e}, "
                    f"{diag.elapsed:.2f}s)")
    else:
        logger.warning(f"{method}: stopped at max_iter={iteration} without reaching the gap tolerance "
                       f"(last gap={diag.final_gap})")


def solve_as_matrix(obs: ObservationSet, shape: Sequence[int], k: int, cfg: SolverConfig) -> Solution:
    """Trace norm of the mode-k unfolding. `k` is 0-based."""
    shape = _check_problem(obs, shape)
    if not 0 <= k < len(shape):
        raise ShapeError(f"Mode {k} out of range for a {len(shape)}-way tensor")
    y = obs.values
    idx = obs.index_tuple
    mask = obs.mask()
    lam = cfg.lam
    eta = step_size(y, cfg.eta0, "matrix")
    diag = Diagnostics(eta=eta)
    monitor = _GapMonitor(cfg.tol, diag)
    logger.info(f"matrix (mode {k + 1}): shape={shape}, M={obs.size}, lambda={lam}, eta={eta:.4g}")

    y_full = scatter_array(y, obs)
    x = np.zeros(shape)
    Z = np.zeros(shape)
    alpha = np.zeros(shape)
    started = time.perf_counter()
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        if lam == 0:
            x = Z - alpha
            x[idx] = y
        else:
            x = (y_full + lam * eta * (Z - alpha)) / (mask + lam * eta)
        Zk = prox_trace(unfold_array(x + alpha, k), 1.0 / eta)
        Z = fold_array(Zk, k, shape)
        alpha = alpha + (x - Z)

        if it % cfg.gap_interval == 0 or it == cfg.max_iter:
            primal = primal_objective("matrix", obs, cfg, x, mode=k)
            feasible = dual_feasible_as_matrix(eta * alpha, obs, k)
            dual = dual_objective(feasible[idx], y, lam)
            if monitor.record(it, primal, dual):
                converged = True
                break

    _finish(monitor, diag, "matrix", it, converged, started)
    return Solution(
        method="matrix",
        X_hat=DenseTensor(x),
        components=(unfold_array(Z, k),),
        multipliers=(unfold_array(alpha, k),),
        diagnostics=diag,
        mode=k,
    )


def solve_constraint(obs: ObservationSet, shape: Sequence[int], cfg: SolverConfig) -> Solution:
    """Overlapped trace norm: sum_k gamma_k ||X_(k)||_* over a single tensor."""
    shape = _check_problem(obs, shape)
    K = len(shape)
    gammas = cfg.gammas_for(K)
    y = obs.values
    idx = obs.index_tuple
    mask = obs.mask()
    lam = cfg.lam
    eta = step_size(y, cfg.eta0, "constraint")
    diag = Diagnostics(eta=eta)
    monitor = _GapMonitor(cfg.tol, diag)
    logger.info(f"constraint: shape={shape}, M={obs.size}, lambda={lam}, eta={eta:.4g}, gammas={list(gammas)}")

    y_full = scatter_array(y, obs)
    x = np.zeros(shape)
    Z = [np.zeros(shape) for _ in range(K)]
    alpha = [np.zeros(shape) for _ in range(K)]
    started = time.perf_counter()
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        predictions = sum(Zk - ak for Zk, ak in zip(Z, alpha))
        if lam == 0:
            x = predictions / K
            x[idx] = y
        else:
            x = (y_full + lam * eta * predictions) / (mask + lam * eta * K)
        for k in range(K):
            Zk = prox_trace(unfold_array(x + alpha[k], k), gammas[k] / eta)
            Z[k] = fold_array(Zk, k, shape)
            alpha[k] = alpha[k] + (x - Z[k])

        if it % cfg.gap_interval == 0 or it == cfg.max_iter:
            primal = primal_objective("constraint", obs, cfg, x)
            feasible = dual_feasible_constraint([eta * a for a in alpha], obs, gammas)
            dual = dual_objective(sum(feasible)[idx], y, lam)
            if monitor.record(it, primal, dual):
                converged = True
                break

    _finish(monitor, diag, "constraint", it, converged, started)
    return Solution(
        method="constraint",
        X_hat=DenseTensor(x),
        components=tuple(unfold_array(Zk, k) for k, Zk in enumerate(Z)),
        multipliers=tuple(unfold_array(ak, k) for k, ak in enumerate(alpha)),
        diagnostics=diag,
    )


def _interpolating_components(components: Sequence[np.ndarray], obs: ObservationSet) -> List[Matrix]:
    """Spread the observed-entry residual evenly over the K components so that they interpolate y."""
    K = len(components)
    pred = sum(components)
    spread = scatter_array(obs.values - pred[obs.index_tuple], obs) / K
    return [unfold_array(zk + spread, k) for k, zk in enumerate(components)]


def solve_mixture(obs: ObservationSet, shape: Sequence[int], cfg: SolverConfig) -> Solution:
    """Latent (mixture) trace norm, solved by ADMM on the dual; the components z_k are its multipliers."""
    shape = _check_problem(obs, shape)
    K = len(shape)
    gammas = cfg.gammas_for(K)
    y = obs.values
    idx = obs.index_tuple
    lam = cfg.lam
    eta = step_size(y, cfg.eta0, "mixture")
    diag = Diagnostics(eta=eta)
    monitor = _GapMonitor(cfg.tol, diag)
    logger.info(f"mixture: shape={shape}, M={obs.size}, lambda={lam}, eta={eta:.4g}, gammas={list(gammas)}")

    z = [np.zeros(shape) for _ in range(K)]
    eta_w = [np.zeros(shape) for _ in range(K)]
    alpha = np.zeros(obs.size)
    started = time.perf_counter()
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        lagged = sum(zk - wk for zk, wk in zip(z, eta_w))
        alpha = (y - lagged[idx]) / (lam + eta * K)
        a_full = scatter_array(alpha, obs)
        for k in range(K):
            v = z[k] + eta * a_full
            zk = prox_trace(unfold_array(v, k), gammas[k] * eta)
            z_new = fold_array(zk, k, shape)
            eta_w[k] = v - z_new
            z[k] = z_new

        if it % cfg.gap_interval == 0 or it == cfg.max_iter:
            if lam == 0:
                state = _interpolating_components(z, obs)
            else:
                state = [unfold_array(zk, k) for k, zk in enumerate(z)]
            primal = primal_objective("mixture", obs, cfg, state)
            feasible = dual_feasible_mixture(alpha, obs, gammas)
            dual = dual_objective(feasible, y, lam)
            if monitor.record(it, primal, dual):
                converged = True
                break

    _finish(monitor, diag, "mixture", it, converged, started)
    # at lambda = 0 return the interpolating point the gap was certified on
    if lam == 0:
        components = _interpolating_components(z, obs)
    else:
        components = [unfold_array(zk, k) for k, zk in enumerate(z)]
    X_hat = sum(fold_array(Zk, k, shape) for k, Zk in enumerate(components))
    return Solution(
        method="mixture",
        X_hat=DenseTensor(X_hat),
        components=tuple(components),
        multipliers=(alpha.copy(),),
        diagnostics=diag,
    )


def solve(method: str, obs: ObservationSet, cfg: SolverConfig, mode: Optional[int] = None,
          shape: Optional[Sequence[int]] = None) -> Solution:
    """Dispatch on the method name; `mode` (0-based) is required for ``matrix``."""
    shape = obs.shape if shape is None else shape
    if method == "matrix":
        if mode is None:
            raise SolverConfigError("The matrix method needs a mode")
        return solve_as_matrix(obs, shape, mode, cfg)
    if method == "constraint":
        return solve_constraint(obs, shape, cfg)
    if method == "mixture":
        return solve_mixture(obs, shape, cfg)
    raise SolverConfigError(f"Unknown method: {method} (expected one of {', '.join(METHODS)})")
