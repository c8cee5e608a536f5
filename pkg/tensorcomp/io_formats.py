"""
Text formats.

    .ten   tensor v1 / extents / N values in linear (mode-1-fastest) order
    .obs   obs v1 / extents / M lines "i1 ... iK value" with 1-based indices
    .fac   fac v1 / optional "weights w1 ... wR" / per mode "factor k rows cols"
           followed by rows*cols values in column-major order
    .json  solver diagnostics, schema diag-v1
    .csv   sweep rows

Numbers are written with 17 significant digits so that reading back
reproduces the in-memory doubles exactly.
"""

import csv
import json
import logging
import platform
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy

from .factorize import CpModel, TuckerModel
from .solvers import Solution, SolverConfig
from .tensor_core import DenseTensor, ObservationSet, ShapeError
from .workbench import SweepRow

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

TENSOR_MAGIC = "tensor v1"
OBS_MAGIC = "obs v1"
FAC_MAGIC = "fac v1"
DIAG_SCHEMA = "diag-v1"
SWEEP_COLUMNS = ["method", "ranks", "sum_ranks", "fraction", "mean_error", "sd_error",
                 "mean_time", "n_rep", "threshold"]


class FormatError(ValueError):
    """Malformed tensor, observation or factor file."""


def fmt(value: float) -> str:
    return format(float(value), ".17g")


class _LineReader:
    """Reads a text file line by line, reporting file and line number on errors."""

    def __init__(self, path: PathLike):
        self.path = Path(path)
        if not self.path.exists():
            raise FileNotFoundError(f"File not found: {self.path}")
        with open(self.path, "r", encoding="utf-8") as f:
            self.lines = [line.strip() for line in f]
        self.offset = 0

    def error(self, message: str) -> FormatError:
        return FormatError(f"{self.path}:{self.offset}: {message}")

    def next_line(self) -> str:
        while self.offset < len(self.lines):
            line = self.lines[self.offset]
            self.offset += 1
            if line:
                return line
        raise self.error("unexpected end of file")

    def at_end(self) -> bool:
        return all(not line for line in self.lines[self.offset:])

    def expect(self, magic: str):
        line = self.next_line()
        if line != magic:
            raise self.error(f"expected header '{magic}', got '{line}'")

    def read_ints(self) -> List[int]:
        line = self.next_line()
        try:
            return [int(tok) for tok in line.split()]
        except ValueError:
            raise self.error(f"expected integers, got '{line}'") from None

    def read_floats(self, count: int) -> np.ndarray:
        """Read `count` whitespace-separated floats, possibly spread over several lines."""
        out: List[float] = []
        while len(out) < count:
            line = self.next_line()
            try:
                out.extend(float(tok) for tok in line.split())
            except ValueError:
                raise self.error(f"expected numbers, got '{line}'") from None
        if len(out) != count:
            raise self.error(f"expected {count} values, got {len(out)}")
        return np.array(out)

    def read_shape(self) -> Tuple[int, ...]:
        shape = tuple(self.read_ints())
        if not shape or any(n < 1 for n in shape):
            raise self.error(f"invalid extents {shape}")
        return shape


def write_tensor(path: PathLike, X: DenseTensor):
    with open(path, "w", encoding="utf-8") as f:
        f.write(TENSOR_MAGIC + "\n")
        f.write(" ".join(str(n) for n in X.shape) + "\n")
        for v in X.values:
            f.write(fmt(v) + "\n")
    logger.debug(f"Wrote tensor of shape {X.shape} to {path}")


def read_tensor(path: PathLike) -> DenseTensor:
    reader = _LineReader(path)
    reader.expect(TENSOR_MAGIC)
    shape = reader.read_shape()
    values = reader.read_floats(int(np.prod(shape)))
    if not reader.at_end():
        raise reader.error("trailing data after tensor values")
    try:
        return DenseTensor.from_values(shape, values)
    except ValueError as e:
        raise reader.error(str(e)) from e


def write_observations(path: PathLike, obs: ObservationSet):
    with open(path, "w", encoding="utf-8") as f:
        f.write(OBS_MAGIC + "\n")
        f.write(" ".join(str(n) for n in obs.shape) + "\n")
        for idx, v in zip(obs.indices, obs.values):
            f.write(" ".join(str(int(i) + 1) for i in idx) + " " + fmt(v) + "\n")
    logger.debug(f"Wrote {obs.size} observations to {path}")


def read_observations(path: PathLike) -> ObservationSet:
    reader = _LineReader(path)
    reader.expect(OBS_MAGIC)
    shape = reader.read_shape()
    K = len(shape)
    indices, values = [], []
    while not reader.at_end():
        line = reader.next_line()
        toks = line.split()
        if len(toks) != K + 1:
            raise reader.error(f"expected {K} indices and a value, got '{line}'")
        try:
            indices.append([int(t) - 1 for t in toks[:K]])
            values.append(float(toks[K]))
        except ValueError:
            raise reader.error(f"malformed observation '{line}'") from None
    if not indices:
        raise reader.error("no observations")
    try:
        return ObservationSet(shape, np.array(indices), np.array(values))
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e


def write_factors(path: PathLike, factors: Sequence[np.ndarray], weights: Optional[np.ndarray] = None):
    with open(path, "w", encoding="utf-8") as f:
        f.write(FAC_MAGIC + "\n")
        if weights is not None:
            f.write("weights " + " ".join(fmt(w) for w in weights) + "\n")
        for k, A in enumerate(factors):
            A = np.asarray(A, dtype=float)
            f.write(f"factor {k + 1} {A.shape[0]} {A.shape[1]}\n")
            for v in A.ravel(order="F"):
                f.write(fmt(v) + "\n")


def read_factors(path: PathLike) -> Tuple[List[np.ndarray], Optional[np.ndarray]]:
    """Returns (factors, weights); weights is None when the file carries no weights line."""
    reader = _LineReader(path)
    reader.expect(FAC_MAGIC)
    weights = None
    factors: List[np.ndarray] = []
    while not reader.at_end():
        line = reader.next_line()
        toks = line.split()
        if toks[0] == "weights" and weights is None and not factors:
            try:
                weights = np.array([float(t) for t in toks[1:]])
            except ValueError:
                raise reader.error(f"malformed weights line '{line}'") from None
            continue
        if toks[0] != "factor" or len(toks) != 4:
            raise reader.error(f"expected 'factor k rows cols', got '{line}'")
        try:
            k, rows, cols = (int(t) for t in toks[1:])
        except ValueError:
            raise reader.error(f"malformed factor header '{line}'") from None
        if k != len(factors) + 1 or rows < 1 or cols < 1:
            raise reader.error(f"unexpected factor header '{line}'")
        factors.append(reader.read_floats(rows * cols).reshape((rows, cols), order="F"))
    if not factors:
        raise reader.error("no factors")
    return factors, weights


def write_cp(path: PathLike, model: CpModel):
    write_factors(path, model.factors, model.weights)


def read_cp(path: PathLike) -> CpModel:
    factors, weights = read_factors(path)
    if weights is None:
        raise FormatError(f"{path}: a CP model needs a weights line")
    try:
        return CpModel(weights, tuple(factors))
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e


def write_tucker(path: PathLike, model: TuckerModel, core_path: Optional[PathLike] = None):
    """Factors go to `path` in the .fac layout; the core, when `core_path` is given, to a .ten file."""
    write_factors(path, model.factors)
    if core_path is not None:
        write_tensor(core_path, model.core)


def _finite_or_none(v: Optional[float]) -> Optional[float]:
    return float(v) if v is not None and np.isfinite(v) else None


def run_metadata() -> Dict[str, str]:
    return {
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "platform": platform.platform(),
    }


def diagnostics_dict(solution: Solution, cfg: SolverConfig, include_timing: bool = True) -> Dict[str, Any]:
    diag = solution.diagnostics
    out: Dict[str, Any] = {
        "schema": DIAG_SCHEMA,
        "method": solution.method,
        "mode": solution.mode + 1 if solution.mode is not None else None,
        "shape": list(solution.shape),
        "config": cfg.to_dict(),
        "eta": diag.eta,
        "iterations": diag.iterations,
        "reason": diag.reason,
        "converged": diag.converged,
        "final_gap": _finite_or_none(diag.final_gap),
        "records": {
            "iteration": [r.iteration for r in diag.records],
            "primal": [_finite_or_none(r.primal) for r in diag.records],
            "dual": [_finite_or_none(r.dual) for r in diag.records],
            "best_dual": [_finite_or_none(r.best_dual) for r in diag.records],
            "gap": [_finite_or_none(r.gap) for r in diag.records],
        },
    }
    if include_timing:
        out["elapsed_seconds"] = diag.elapsed
        out["metadata"] = run_metadata()
    return out


def write_diagnostics(path: PathLike, solution: Solution, cfg: SolverConfig, include_timing: bool = True):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(diagnostics_dict(solution, cfg, include_timing), f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")


def _ranks_str(ranks: Sequence[int]) -> str:
    return "x".join(str(r) for r in ranks)


def write_sweep_csv(path_or_file, rows: Sequence[SweepRow], include_timing: bool = True):
    """Write sweep rows; `path_or_file` is a path or an open text stream."""
    def _write(f):
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for r in rows:
            writer.writerow([
                r.method, _ranks_str(r.ranks), r.sum_ranks, fmt(r.fraction), fmt(r.mean_error),
                fmt(r.sd_error), fmt(r.mean_time if include_timing else 0.0), r.n_rep,
                fmt(r.threshold) if r.threshold is not None else "",
            ])

    if hasattr(path_or_file, "write"):
        _write(path_or_file)
    else:
        with open(path_or_file, "w", encoding="utf-8", newline="") as f:
            _write(f)


def read_sweep_csv(path: PathLike) -> List[SweepRow]:
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        for rec in csv.DictReader(f):
            rows.append(SweepRow(
                method=rec["method"],
                ranks=tuple(int(r) for r in rec["ranks"].split("x")),
                sum_ranks=int(rec["sum_ranks"]),
                fraction=float(rec["fraction"]),
                mean_error=float(rec["mean_error"]),
                sd_error=float(rec["sd_error"]),
                mean_time=float(rec["mean_time"]),
                n_rep=int(rec["n_rep"]),
                threshold=float(rec["threshold"]) if rec["threshold"] else None,
            ))
    return rows
