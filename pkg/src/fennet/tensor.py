"""Dense multilinear algebra on numpy arrays.

Tensors are plain C-ordered ``numpy.ndarray`` objects (first index slowest),
masks are boolean arrays of the same shape. Modes are 1-based throughout the
public API to match the usual mode-k notation; ``matricize(T, 1)`` unfolds
the first axis.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError

MAX_MODES = 4


def as_tensor(values, dims=None) -> np.ndarray:
    """Return a float64 C-contiguous tensor, optionally reshaped to ``dims``."""
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if dims is not None:
        dims = tuple(int(d) for d in dims)
        if arr.size != int(np.prod(dims)):
            raise DimensionError(f"{arr.size} values cannot fill dims {dims}")
        arr = arr.reshape(dims)
    if arr.ndim > MAX_MODES:
        raise DimensionError(f"at most {MAX_MODES} modes supported, got {arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor values must be finite")
    return arr


def as_mask(bits, dims=None) -> np.ndarray:
    arr = np.ascontiguousarray(bits, dtype=bool)
    if dims is not None:
        arr = arr.reshape(tuple(int(d) for d in dims))
    return arr


def _check_mode(ndim: int, mode: int) -> int:
    if not 1 <= mode <= ndim:
        raise DimensionError(f"mode {mode} out of range for a {ndim}-way tensor")
    return mode - 1


def matricize(T: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding.

    Rows index ``mode``; columns flatten the remaining modes in ascending
    order with the last remaining index fastest. For a 3-way tensor and
    ``mode=1`` the column of ``T[i1, i2, i3]`` is ``i2 * d3 + i3``.
    """
    axis = _check_mode(T.ndim, mode)
    return np.moveaxis(T, axis, 0).reshape(T.shape[axis], -1)


def fold(M: np.ndarray, mode: int, dims) -> np.ndarray:
    """Inverse of :func:`matricize`."""
    dims = tuple(int(d) for d in dims)
    axis = _check_mode(len(dims), mode)
    rest = dims[:axis] + dims[axis + 1:]
    if M.ndim != 2 or M.shape != (dims[axis], int(np.prod(rest))):
        raise DimensionError(
            f"matrix of shape {M.shape} does not unfold dims {dims} along mode {mode}")
    return np.ascontiguousarray(np.moveaxis(M.reshape((dims[axis],) + rest), 0, axis))


def mode_product(T: np.ndarray, mode: int, C: np.ndarray) -> np.ndarray:
    """Marginal product ``T x_mode C``: contracts mode ``mode`` of T with the columns of C."""
    axis = _check_mode(T.ndim, mode)
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[1] != T.shape[axis]:
        raise DimensionError(
            f"matrix with {C.shape[-1]} columns cannot act on mode {mode} of size {T.shape[axis]}")
    out = np.tensordot(C, T, axes=(1, axis))
    return np.ascontiguousarray(np.moveaxis(out, 0, axis))


def multi_mode_product(T: np.ndarray, factors: dict[int, np.ndarray]) -> np.ndarray:
    """Apply several mode products; ``factors`` maps 1-based mode -> matrix."""
    for mode, C in sorted(factors.items()):
        T = mode_product(T, mode, C)
    return T


def _check_same(A: np.ndarray, B: np.ndarray) -> None:
    if A.shape != B.shape:
        raise DimensionError(f"dims mismatch: {A.shape} vs {B.shape}")


def inner(A: np.ndarray, B: np.ndarray) -> float:
    """Frobenius inner product (pairwise summation)."""
    _check_same(A, B)
    return float(np.sum(np.multiply(A, B, dtype=np.float64)))


def fnorm(A: np.ndarray) -> float:
    # Scaled to avoid overflow for large entries.
    scale = float(np.max(np.abs(A))) if A.size else 0.0
    if scale == 0.0:
        return 0.0
    S = A / scale
    return scale * float(np.sqrt(np.sum(S * S)))


def mask_apply(A: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Keep entries where ``mask`` is set, zero elsewhere."""
    _check_same(A, mask)
    return np.where(mask, A, 0.0)


def complement(mask: np.ndarray) -> np.ndarray:
    return ~np.asarray(mask, dtype=bool)


def observed_count(mask: np.ndarray) -> int:
    return int(np.count_nonzero(mask))


def kronecker(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.kron(np.atleast_2d(A), np.atleast_2d(B))
