"""Hot numeric kernels, each in a numba and a pure-numpy flavour.

The numba versions are used when numba imports cleanly and the environment
variable ``CAPCOMPRESS_DISABLE_NUMBA`` is unset (or "0").  Both flavours
produce bit-identical results: float sums run strictly in k order starting
from the first product, and integer rounding is half away from zero.

Public names (``matmul``, ``matmul_nt``, ``quantize_slices``, ``qmatmul_acc``,
``requantize``) are bound to the selected flavour at import time.  The
``*_numba`` / ``*_numpy`` variants stay importable for tests and benchmarks.
"""

import os

import numpy as np

INT32_MIN = -(2**31)
INT32_MAX = 2**31 - 1

# rows per chunk in the numpy fallback; bounds the m*k*n temporary
_CHUNK_ELEMS = 1 << 22


def _numba_requested():
    flag = os.environ.get("CAPCOMPRESS_DISABLE_NUMBA", "0").strip().lower()
    return flag in ("", "0", "false", "no")


try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn


USE_NUMBA = HAVE_NUMBA and _numba_requested()
BACKEND = "numba" if USE_NUMBA else "numpy"


# --------------------------------------------------------------------------
# float matmul, sequential k-order summation


@njit(cache=True)
def matmul_numba(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.empty((m, n), dtype=a.dtype)
    for i in range(m):
        a0 = a[i, 0]
        for j in range(n):
            out[i, j] = a0 * b[0, j]
        for p in range(1, k):
            ap = a[i, p]
            for j in range(n):
                out[i, j] += ap * b[p, j]
    return out


@njit(cache=True)
def matmul_nt_numba(a, w):
    # a @ w.T with w stored row-major [n x k]; four independent accumulators
    # per pass for ILP, each still summed in k order
    m, k = a.shape
    n = w.shape[0]
    out = np.empty((m, n), dtype=a.dtype)
    for i in range(m):
        j = 0
        while j + 4 <= n:
            s0 = a[i, 0] * w[j, 0]
            s1 = a[i, 0] * w[j + 1, 0]
            s2 = a[i, 0] * w[j + 2, 0]
            s3 = a[i, 0] * w[j + 3, 0]
            for p in range(1, k):
                ap = a[i, p]
                s0 += ap * w[j, p]
                s1 += ap * w[j + 1, p]
                s2 += ap * w[j + 2, p]
                s3 += ap * w[j + 3, p]
            out[i, j] = s0
            out[i, j + 1] = s1
            out[i, j + 2] = s2
            out[i, j + 3] = s3
            j += 4
        while j < n:
            s = a[i, 0] * w[j, 0]
            for p in range(1, k):
                s += a[i, p] * w[j, p]
            out[i, j] = s
            j += 1
    return out


def matmul_numpy(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.empty((m, n), dtype=a.dtype)
    rows = max(1, _CHUNK_ELEMS // max(1, k * n))
    for start in range(0, m, rows):
        blk = a[start:start + rows, :, None] * b[None, :, :]
        # cumulative sum is strictly sequential along the axis
        out[start:start + rows] = np.cumsum(blk, axis=1, dtype=a.dtype)[:, -1, :]
    return out


def matmul_nt_numpy(a, w):
    m, k = a.shape
    n = w.shape[0]
    out = np.empty((m, n), dtype=a.dtype)
    rows = max(1, _CHUNK_ELEMS // max(1, k * n))
    for start in range(0, m, rows):
        blk = a[start:start + rows, None, :] * w[None, :, :]
        out[start:start + rows] = np.cumsum(blk, axis=2, dtype=a.dtype)[:, :, -1]
    return out


# --------------------------------------------------------------------------
# quantize: round(x / scale) half away from zero, + zero_point, clamp


@njit(cache=True)
def quantize_slices_numba(x, scale, zero_point, qmin, qmax):
    # x: [slices x inner], scale float64 [slices], zero_point int64 [slices]
    s, inner = x.shape
    out = np.empty((s, inner), dtype=np.int8)
    for r in range(s):
        sc = scale[r]
        zp = zero_point[r]
        for c in range(inner):
            v = np.float64(x[r, c]) / sc
            t = np.trunc(v)
            frac = v - t
            if frac >= 0.5:
                t += 1.0
            elif frac <= -0.5:
                t -= 1.0
            q = np.int64(t) + zp
            if q < qmin:
                q = qmin
            elif q > qmax:
                q = qmax
            out[r, c] = q
    return out


def round_half_away(v):
    """Round float64 values to integers, ties away from zero (exact for |v| < 2**52)."""
    t = np.trunc(v)
    frac = v - t
    return t + (frac >= 0.5) - (frac <= -0.5)


def quantize_slices_numpy(x, scale, zero_point, qmin, qmax):
    v = x.astype(np.float64) / scale[:, None]
    q = round_half_away(v) + zero_point[:, None]
    # clip in float space first so huge values do not overflow the int cast
    return np.clip(q, qmin, qmax).astype(np.int8)


# --------------------------------------------------------------------------
# integer matmul with 32-bit accumulator semantics


@njit(cache=True)
def qmatmul_acc_numba(a, zp_a, b, zp_b, bias):
    # a int8 [m x k]; b int8 [k x n]; zp_b int64 [n]; bias int64 [n]
    m, k = a.shape
    n = b.shape[1]
    acc = np.empty((m, n), dtype=np.int64)
    overflow = False
    for i in range(m):
        for j in range(n):
            s = bias[j]
            if s > 2147483647 or s < -2147483648:
                overflow = True
            zb = zp_b[j]
            for p in range(k):
                s += (np.int64(a[i, p]) - zp_a) * (np.int64(b[p, j]) - zb)
                if s > 2147483647 or s < -2147483648:
                    overflow = True
            acc[i, j] = s
    return acc, overflow


def qmatmul_acc_numpy(a, zp_a, b, zp_b, bias):
    m, k = a.shape
    n = b.shape[1]
    prods = (a.astype(np.int64)[:, :, None] - zp_a) * (b.astype(np.int64)[None, :, :] - zp_b[None, None, :])
    partial = np.cumsum(prods, axis=1) + bias[None, None, :]
    overflow = bool(
        np.any(bias > INT32_MAX) or np.any(bias < INT32_MIN)
        or np.any(partial > INT32_MAX) or np.any(partial < INT32_MIN)
    )
    if k == 0:
        return np.broadcast_to(bias, (m, n)).copy(), overflow
    return partial[:, -1, :].copy(), overflow


@njit(cache=True)
def requantize_numba(acc, multiplier, zp_out, qmin, qmax):
    m, n = acc.shape
    out = np.empty((m, n), dtype=np.int8)
    for i in range(m):
        for j in range(n):
            v = np.float64(acc[i, j]) * multiplier[j]
            t = np.trunc(v)
            frac = v - t
            if frac >= 0.5:
                t += 1.0
            elif frac <= -0.5:
                t -= 1.0
            q = t + zp_out
            if q < qmin:
                q = qmin
            elif q > qmax:
                q = qmax
            out[i, j] = np.int64(q)
    return out


def requantize_numpy(acc, multiplier, zp_out, qmin, qmax):
    v = acc.astype(np.float64) * multiplier[None, :]
    q = round_half_away(v) + zp_out
    return np.clip(q, qmin, qmax).astype(np.int8)


if USE_NUMBA:
    matmul = matmul_numba
    matmul_nt = matmul_nt_numba
    quantize_slices = quantize_slices_numba
    qmatmul_acc = qmatmul_acc_numba
    requantize = requantize_numba
else:
    matmul = matmul_numpy
    matmul_nt = matmul_nt_numpy
    quantize_slices = quantize_slices_numpy
    qmatmul_acc = qmatmul_acc_numpy
    requantize = requantize_numpy
