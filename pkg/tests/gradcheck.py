"""Central finite differences for float64 gradient checks."""

import numpy as np

EPS = 1e-3
RTOL = 1e-4
# absolute floor for entries whose true gradient is ~0; the O(eps^2)
# truncation error of central differences is far below this
ATOL = 1e-8


def numeric_grad(f, x, eps=EPS):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        up = f()
        x[i] = old - eps
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * eps)
    return g


def assert_close(analytic, numeric, rtol=RTOL, atol=ATOL):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    assert analytic.shape == numeric.shape
    err = np.abs(analytic - numeric)
    bound = rtol * np.maximum(np.abs(analytic), np.abs(numeric)) + atol
    worst = float(np.max(err - bound)) if err.size else -1.0
    assert worst <= 0, f"max excess error {worst:.3e}"


def max_excess(analytic, numeric, rtol=RTOL, atol=ATOL):
    err = np.abs(np.asarray(analytic, np.float64) - np.asarray(numeric, np.float64))
    bound = rtol * np.maximum(np.abs(analytic), np.abs(numeric)) + atol
    return float(np.max(err - bound))
