"""
Synthetic low-rank problems, observation masks, the generalization error
and the fraction sweeps used to locate recovery thresholds.
"""

import logging
import math
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, replace
from itertools import groupby
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .solvers import METHODS, SolverConfig, solve
from .tensor_core import DenseTensor, ObservationSet, ShapeError, as_array, mode_product

logger = logging.getLogger(__name__)

# --- CONFIGURATION ---
THRESHOLD_ERROR = 0.01
DEFAULT_NREP = 5
# Guards the ceiling in sample_mask against fraction * N landing a hair above an integer.
CEIL_SLACK = 1e-9


@dataclass(frozen=True)
class SynthSpec:
    shape: Tuple[int, ...]
    ranks: Tuple[int, ...]
    seed: int = 0

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        ranks = tuple(int(r) for r in self.ranks)
        if len(shape) != len(ranks):
            raise ShapeError(f"Got {len(ranks)} ranks for a {len(shape)}-way shape")
        if any(n < 1 for n in shape) or any(r < 1 for r in ranks):
            raise ValueError(f"Extents and ranks must be positive: shape={shape}, ranks={ranks}")
        for k, (n, r) in enumerate(zip(shape, ranks)):
            others = math.prod(ranks[:k] + ranks[k + 1:])
            if r > n or (len(ranks) > 1 and r > others):
                raise ValueError(f"Rank {r} is not attainable in mode {k + 1} (extent {n}, "
                                 f"product of other ranks {others})")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "ranks", ranks)


@dataclass(frozen=True)
class ExperimentResult:
    method: str
    ranks: Tuple[int, ...]
    fraction: float
    seed: int
    error: float
    wall_time: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class SweepRow:
    method: str
    ranks: Tuple[int, ...]
    sum_ranks: int
    fraction: float
    mean_error: float
    sd_error: float
    mean_time: float
    n_rep: int
    threshold: Optional[float]


def haar_orthonormal(n: int, r: int, rng: np.random.Generator) -> np.ndarray:
    """n x r matrix with orthonormal columns, Haar distributed on the Stiefel manifold."""
    Q, R = np.linalg.qr(rng.standard_normal((n, r)))
    # sign-correct so the distribution is exactly Haar
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


def gen_lowrank(spec: SynthSpec) -> DenseTensor:
    """Standard-normal core of size `ranks` times a Haar orthonormal factor on every mode."""
    rng = np.random.default_rng(spec.seed)
    X = DenseTensor(rng.standard_normal(spec.ranks))
    for k, (n, r) in enumerate(zip(spec.shape, spec.ranks)):
        X = mode_product(X, haar_orthonormal(n, r, rng), k)
    return X


def sample_mask(shape: Sequence[int], fraction: float, seed: int) -> np.ndarray:
    """Sorted linear indices of ceil(fraction * N) entries drawn uniformly without replacement."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    n = math.prod(int(s) for s in shape)
    m = min(n, max(1, math.ceil(fraction * n - CEIL_SLACK)))
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=m, replace=False))


def sample_observations(X: DenseTensor, fraction: float, seed: int, noise: float = 0.0) -> ObservationSet:
    """Observe a random fraction of X, optionally with i.i.d. N(0, noise^2) errors."""
    linear = sample_mask(X.shape, fraction, seed)
    values = X.values[linear]
    if noise > 0:
        rng = np.random.default_rng([seed, 1])
        values = values + noise * rng.standard_normal(values.size)
    return ObservationSet.from_linear(X.shape, linear, values)


def generalization_error(X_hat, X_true, mask) -> float:
    """||y_pred - y_test|| / ||y_test|| over the entries NOT in `mask` (ObservationSet or boolean array)."""
    est, truth = as_array(X_hat), as_array(X_true)
    if est.shape != truth.shape:
        raise ShapeError(f"Shape mismatch {est.shape} vs {truth.shape}")
    observed = mask.mask() if isinstance(mask, ObservationSet) else np.asarray(mask, dtype=bool)
    test = ~observed
    if not test.any():
        raise ValueError("The mask covers every entry; there is no test set")
    y_test = truth[test]
    y_pred = est[test]
    denom = float(np.linalg.norm(y_test))
    diff = float(np.linalg.norm(y_pred - y_test))
    if denom == 0:
        if diff == 0:
            return 0.0
        raise ValueError("Test entries of the true tensor are all zero")
    return diff / denom


def sum_of_ranks(ranks: Sequence[int]) -> int:
    """sum_k min(r_k, prod_{k' != k} r_{k'}): the attainable mode-rank total."""
    ranks = [int(r) for r in ranks]
    return sum(min(r, math.prod(ranks[:k] + ranks[k + 1:])) for k, r in enumerate(ranks))


def expand_methods(methods: Sequence[str], ndim: int) -> List[str]:
    """`matrix` expands to one label per mode (`matrix-1`, ...); `matrix-k` selects a single mode."""
    labels = []
    for m in methods:
        if m == "matrix":
            labels.extend(f"matrix-{k + 1}" for k in range(ndim))
        elif m.startswith("matrix-"):
            k = int(m.split("-", 1)[1])
            if not 1 <= k <= ndim:
                raise ValueError(f"Method {m}: mode must lie in 1..{ndim}")
            labels.append(m)
        elif m in METHODS:
            labels.append(m)
        else:
            raise ValueError(f"Unknown method: {m}")
    return labels


def solve_labeled(label: str, obs: ObservationSet, cfg: SolverConfig):
    """Run a solver given a sweep label such as `constraint` or `matrix-2`."""
    if label.startswith("matrix-"):
        return solve("matrix", obs, cfg, mode=int(label.split("-", 1)[1]) - 1)
    return solve(label, obs, cfg)


def run_cell(shape: Sequence[int], ranks: Sequence[int], methods: Sequence[str], fraction: float,
             seed: int, cfg: SolverConfig, noise: float = 0.0) -> List[ExperimentResult]:
    """One synthetic problem, observed once, solved by each method."""
    spec = SynthSpec(tuple(shape), tuple(ranks), seed)
    X = gen_lowrank(spec)
    obs = sample_observations(X, fraction, seed + 1, noise)
    results = []
    for label in methods:
        started = time.perf_counter()
        sol = solve_labeled(label, obs, cfg)
        elapsed = time.perf_counter() - started
        results.append(ExperimentResult(
            method=label,
            ranks=spec.ranks,
            fraction=fraction,
            seed=seed,
            error=generalization_error(sol.X_hat, X, obs),
            wall_time=elapsed,
            iterations=sol.diagnostics.iterations,
            converged=sol.diagnostics.converged,
        ))
    return results


def _cell_task(task) -> List[ExperimentResult]:
    return run_cell(*task)


def cell_seeds(base_seed: int, n_ranks: int, n_fractions: int, nrep: int) -> np.ndarray:
    """Independent integer seeds indexed [rank tuple, fraction, repetition]."""
    ss = np.random.SeedSequence(base_seed)
    return ss.generate_state(n_ranks * n_fractions * nrep, dtype=np.uint32).reshape(
        n_ranks, n_fractions, nrep).astype(np.int64)


def threshold_fraction(rows: Sequence[SweepRow], level: float = THRESHOLD_ERROR) -> Dict[Tuple[str, Tuple[int, ...]], Optional[float]]:
    """Smallest fraction whose mean error is below `level`, per (method, ranks)."""
    out = {}
    key = lambda r: (r.method, r.ranks)
    for group_key, group in groupby(sorted(rows, key=lambda r: (r.method, r.ranks, r.fraction)), key=key):
        passing = [r.fraction for r in group if r.mean_error < level]
        out[group_key] = min(passing) if passing else None
    return out


def aggregate(results: Sequence[ExperimentResult], level: float = THRESHOLD_ERROR) -> List[SweepRow]:
    """Average repetitions into one row per (method, ranks, fraction), sorted by that key."""
    rows = []
    key = lambda r: (r.method, r.ranks, r.fraction)
    for (method, ranks, fraction), group in groupby(sorted(results, key=lambda r: (*key(r), r.seed)), key=key):
        group = list(group)
        errors = np.array([r.error for r in group])
        rows.append(SweepRow(
            method=method,
            ranks=ranks,
            sum_ranks=sum_of_ranks(ranks),
            fraction=fraction,
            mean_error=float(errors.mean()),
            sd_error=float(errors.std(ddof=1)) if errors.size > 1 else 0.0,
            mean_time=float(np.mean([r.wall_time for r in group])),
            n_rep=len(group),
            threshold=None,
        ))
    thresholds = threshold_fraction(rows, level)
    return [replace(r, threshold=thresholds[(r.method, r.ranks)]) for r in rows]


def run_sweep(shape: Sequence[int], rank_tuples: Sequence[Sequence[int]], methods: Sequence[str],
              fractions: Sequence[float], cfg: SolverConfig, nrep: int = DEFAULT_NREP, seed: int = 0,
              workers: int = 1, noise: float = 0.0, progress: bool = True) -> List[SweepRow]:
    """
    Run every (ranks, fraction, repetition) cell with fresh data and aggregate.

    Results do not depend on `workers`: seeds are fixed per cell and the
    output is sorted by (method, ranks, fraction).
    """
    if not rank_tuples or not fractions or not methods:
        raise ValueError("The sweep grid is empty")
    if nrep < 1:
        raise ValueError(f"nrep must be >= 1, got {nrep}")
    shape = tuple(int(n) for n in shape)
    labels = expand_methods(methods, len(shape))
    seeds = cell_seeds(seed, len(rank_tuples), len(fractions), nrep)
    tasks = []
    for i, ranks in enumerate(rank_tuples):
        SynthSpec(shape, tuple(ranks))  # reject unattainable ranks before any work starts
        for j, fraction in enumerate(fractions):
            for rep in range(nrep):
                tasks.append((shape, tuple(ranks), labels, float(fraction), int(seeds[i, j, rep]), cfg, noise))
    logger.info(f"Sweep: {len(tasks)} cells x {len(labels)} methods, workers={workers}")

    results: List[ExperimentResult] = []
    with tqdm(total=len(tasks), desc="Sweep", unit="cell", disable=not progress) as pbar:
        if workers > 1:
            ctx = multiprocessing.get_context("spawn")
            with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as executor:
                futures = [executor.submit(_cell_task, t) for t in tasks]
                for future in as_completed(futures):
                    results.extend(future.result())
                    pbar.update(1)
        else:
            for t in tasks:
                results.extend(_cell_task(t))
                pbar.update(1)
    return aggregate(results)
