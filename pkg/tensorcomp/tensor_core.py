"""
Dense K-way tensors, observation sets and the unfolding algebra.

Linearization convention: mode 1 varies fastest (column-major), so the
linear index of (i_1, ..., i_K) is sum_k i_k * prod_{k' < k} n_{k'}.
Modes and indices are 0-based in this module; the file formats and the
CLI speak 1-based and convert at their boundary.
"""

import logging
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

# A matrix is a plain 2-D float ndarray; its linear order is column-major.
Matrix = np.ndarray


class ShapeError(ValueError):
    """Mode, dimension or index mismatch."""


def _check_shape(shape: Sequence[int]) -> Tuple[int, ...]:
    shape = tuple(int(n) for n in shape)
    if len(shape) < 1:
        raise ShapeError("A tensor needs at least one mode")
    if any(n < 1 for n in shape):
        raise ShapeError(f"Every extent must be positive, got {shape}")
    return shape


def _check_mode(k: int, ndim: int) -> int:
    if not 0 <= k < ndim:
        raise ShapeError(f"Mode {k} out of range for a {ndim}-way tensor")
    return int(k)


@dataclass(frozen=True)
class DenseTensor:
    """K-way real tensor. `data` is stored as an ndarray of the tensor's shape."""
    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=float)
        if arr.ndim < 1:
            raise ShapeError("A tensor needs at least one mode")
        _check_shape(arr.shape)
        if not np.all(np.isfinite(arr)):
            raise ValueError("Tensor values must be finite (no NaN/Inf)")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_values(cls, shape: Sequence[int], values) -> "DenseTensor":
        """Build from values listed in the mode-1-fastest linear order."""
        shape = _check_shape(shape)
        values = np.asarray(values, dtype=float).ravel()
        expected = int(np.prod(shape))
        if values.size != expected:
            raise ShapeError(f"Expected {expected} values for shape {shape}, got {values.size}")
        return cls(values.reshape(shape, order="F"))

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> "DenseTensor":
        return cls(np.zeros(_check_shape(shape)))

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def values(self) -> np.ndarray:
        """Values in the linear (mode-1-fastest) order."""
        return self.data.ravel(order="F")

    def norm(self) -> float:
        return float(np.linalg.norm(self.data.ravel()))

    def __eq__(self, other):
        if not isinstance(other, DenseTensor):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.data, other.data))


TensorLike = Union[DenseTensor, np.ndarray]


def as_array(X: TensorLike) -> np.ndarray:
    return X.data if isinstance(X, DenseTensor) else np.asarray(X, dtype=float)


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """The sampling operator: M distinct 0-based multi-indices and their values."""
    shape: Tuple[int, ...]
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        shape = _check_shape(self.shape)
        indices = np.array(self.indices, dtype=np.int64)
        values = np.array(self.values, dtype=float).ravel()
        if indices.ndim == 1 and len(shape) == 1:
            indices = indices.reshape(-1, 1)
        if indices.ndim != 2 or indices.shape[1] != len(shape):
            raise ShapeError(f"Indices must be an (M, {len(shape)}) array, got {indices.shape}")
        m = indices.shape[0]
        if m < 1:
            raise ShapeError("An observation set needs at least one entry")
        if values.size != m:
            raise ShapeError(f"Got {m} indices but {values.size} values")
        if np.any(indices < 0) or np.any(indices >= np.array(shape)):
            raise ShapeError(f"Observed index out of bounds for shape {shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("Observed values must be finite")
        linear = np.ravel_multi_index(tuple(indices.T), shape, order="F")
        if np.unique(linear).size != m:
            raise ShapeError("Duplicate observed indices")
        indices.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_linear(cls, shape: Sequence[int], linear, values) -> "ObservationSet":
        shape = _check_shape(shape)
        linear = np.asarray(linear, dtype=np.int64).ravel()
        n = int(np.prod(shape))
        if np.any(linear < 0) or np.any(linear >= n):
            raise ShapeError(f"Linear index out of bounds for shape {shape}")
        indices = np.stack(np.unravel_index(linear, shape, order="F"), axis=1)
        return cls(shape, indices, values)

    @property
    def size(self) -> int:
        return self.indices.shape[0]

    @property
    def linear_indices(self) -> np.ndarray:
        return np.ravel_multi_index(tuple(self.indices.T), self.shape, order="F")

    @property
    def index_tuple(self) -> Tuple[np.ndarray, ...]:
        """Fancy-index tuple selecting the observed entries of an ndarray."""
        return tuple(self.indices.T)

    def mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[self.index_tuple] = True
        return m

    def with_values(self, values) -> "ObservationSet":
        return ObservationSet(self.shape, self.indices, values)


def unfold_array(X: np.ndarray, k: int) -> Matrix:
    """Mode-k unfolding of an ndarray; columns enumerate (i_{k+1},...,i_K,i_1,...,i_{k-1})."""
    K = X.ndim
    k = _check_mode(k, K)
    order = list(range(k, K)) + list(range(k))
    return np.transpose(X, order).reshape((X.shape[k], -1), order="F")


def fold_array(M: Matrix, k: int, shape: Sequence[int]) -> np.ndarray:
    shape = _check_shape(shape)
    K = len(shape)
    k = _check_mode(k, K)
    M = np.asarray(M, dtype=float)
    n = int(np.prod(shape))
    if M.ndim != 2 or M.shape[0] != shape[k] or M.shape[0] * M.shape[1] != n:
        raise ShapeError(f"Cannot fold a {M.shape} matrix at mode {k} into shape {shape}")
    order = list(range(k, K)) + list(range(k))
    permuted = M.reshape([shape[i] for i in order], order="F")
    return np.transpose(permuted, np.argsort(order))


def unfold(X: TensorLike, k: int) -> Matrix:
    return unfold_array(as_array(X), k)


def fold(M: Matrix, k: int, shape: Sequence[int]) -> DenseTensor:
    return DenseTensor(fold_array(M, k, shape))


def mode_product(X: TensorLike, U: Matrix, k: int) -> DenseTensor:
    """X x_k U: replaces extent n_k by U.rows."""
    arr = as_array(X)
    k = _check_mode(k, arr.ndim)
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if U.shape[1] != arr.shape[k]:
        raise ShapeError(f"Mode-{k} product needs {arr.shape[k]} columns, got {U.shape}")
    new_shape = list(arr.shape)
    new_shape[k] = U.shape[0]
    return fold(U @ unfold_array(arr, k), k, new_shape)


def observe(X: TensorLike, obs: ObservationSet) -> np.ndarray:
    arr = as_array(X)
    if arr.shape != obs.shape:
        raise ShapeError(f"Tensor shape {arr.shape} does not match observation shape {obs.shape}")
    return arr[obs.index_tuple].copy()


def scatter_array(y, obs: ObservationSet) -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    if y.size != obs.size:
        raise ShapeError(f"Expected {obs.size} values to scatter, got {y.size}")
    out = np.zeros(obs.shape)
    out[obs.index_tuple] = y
    return out


def scatter(y, obs: ObservationSet, shape: Sequence[int] = None) -> DenseTensor:
    """Adjoint of observe: y at observed entries, zero elsewhere."""
    if shape is not None and tuple(shape) != obs.shape:
        raise ShapeError(f"Shape {tuple(shape)} does not match observation shape {obs.shape}")
    return DenseTensor(scatter_array(y, obs))


def inner(A: TensorLike, B: TensorLike) -> float:
    a, b = as_array(A), as_array(B)
    if a.shape != b.shape:
        raise ShapeError(f"Shape mismatch {a.shape} vs {b.shape}")
    return float(np.vdot(a, b))
