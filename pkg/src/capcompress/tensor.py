"""Dense float32 tensors and the handful of linear-algebra primitives the rest
of the package builds on.

Tensors are plain row-major ``numpy.ndarray`` objects; the helpers here only
add shape checking and the fixed summation order of :func:`matmul`.
"""

import numpy as np

from . import kernels
from .errors import DomainError, ShapeError

FLOAT = np.float32


def as_tensor(data, shape=None, dtype=FLOAT):
    """Build a C-contiguous tensor, validating dimensions and finiteness."""
    arr = np.array(data, dtype=dtype, order="C")
    if shape is not None:
        shape = tuple(int(d) for d in shape)
        if int(np.prod(shape)) != arr.size:
            raise ShapeError(f"cannot view {arr.size} values as shape {shape}")
        arr = arr.reshape(shape)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if any(d < 1 for d in arr.shape):
        raise ShapeError(f"all dimensions must be >= 1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("tensor contains NaN or Inf")
    return arr


def identity(n, dtype=FLOAT):
    return np.eye(n, dtype=dtype)


def matmul(a, b):
    """Matrix product with plain k-order accumulation.

    ``out[i, j] = a[i, 0]*b[0, j] + a[i, 1]*b[1, j] + ...`` evaluated left to
    right in the operands' precision, so results are reproducible across
    backends and machines.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    dtype = np.result_type(a.dtype, b.dtype, FLOAT)
    return kernels.matmul(np.ascontiguousarray(a, dtype=dtype), np.ascontiguousarray(b, dtype=dtype))


_ELEMENTWISE = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def elementwise(op, a, b):
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return fn(a, b)


def reduce(op, t, axis=None):
    """Reduce with ``max_abs``, ``min``, ``max`` or ``sum``.

    Returns a Python float when ``axis`` is None, otherwise a tensor with that
    axis removed.
    """
    t = np.asarray(t)
    if axis is not None and not (-t.ndim <= axis < t.ndim):
        raise ShapeError(f"axis {axis} out of range for rank {t.ndim}")
    if t.size == 0:
        raise DomainError("cannot reduce an empty tensor")
    if op == "max_abs":
        out = np.max(np.abs(t), axis=axis)
    elif op == "min":
        out = np.min(t, axis=axis)
    elif op == "max":
        out = np.max(t, axis=axis)
    elif op == "sum":
        out = np.sum(t, axis=axis, dtype=t.dtype if t.dtype.kind == "f" else None)
    else:
        raise ValueError(f"unknown reduction {op!r}")
    if axis is None:
        return float(out)
    return out
