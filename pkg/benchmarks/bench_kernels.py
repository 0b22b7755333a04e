"""Compare the numba kernels with their pure-numpy fallbacks.

    python benchmarks/bench_kernels.py            # kernel micro-benchmarks
    python benchmarks/bench_kernels.py --e2e      # also time a training run per backend

The end-to-end mode runs a short toy training in two subprocesses, one with
CAPCOMPRESS_DISABLE_NUMBA=1, since the backend is fixed at import time.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from capcompress import kernels

E2E_SNIPPET = """
import time
from capcompress import kernels, pipeline
from capcompress.toydata import bundled_config_path
cfg = pipeline.Config.load(bundled_config_path(), {"train": {"epochs": "5"}})
data = pipeline.load_dataset(cfg)
pipeline.train_baseline(cfg, data)  # warm-up, includes JIT compilation
t0 = time.perf_counter()
pipeline.train_baseline(cfg, data)
print(kernels.BACKEND, time.perf_counter() - t0)
"""


def best_of(fn, number, repeat=5):
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def cases(rng):
    x = rng.standard_normal((1, 256)).astype(np.float32)
    w = rng.standard_normal((512, 256)).astype(np.float32)
    g = rng.standard_normal((512, 1)).astype(np.float32)
    xq = rng.integers(-128, 128, size=(1, 256)).astype(np.int8)
    wq = rng.integers(-127, 128, size=(256, 512)).astype(np.int8)
    zp = np.zeros(512, dtype=np.int64)
    acc = rng.integers(-10**5, 10**5, size=(1, 512)).astype(np.int64)
    mult = rng.random(512) * 1e-3
    scale = np.array([0.01])
    zp1 = np.array([3], dtype=np.int64)
    return {
        "matmul_nt 1x256 . (512x256)^T": ("matmul_nt", (x, w)),
        "matmul 512x1 . 1x256 (outer)": ("matmul", (g, x)),
        "quantize_slices 1x131072": ("quantize_slices", (w.reshape(1, -1), scale, zp1, -128, 127)),
        "qmatmul_acc 1x256 . 256x512": ("qmatmul_acc", (xq, np.int64(0), wq, zp, zp)),
        "requantize 1x512": ("requantize", (acc, mult, np.int64(0), -128, 127)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--e2e", action="store_true", help="also compare a toy training run")
    ap.add_argument("--number", type=int, default=200)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    print(f"{'kernel':<34} {'numba us':>10} {'numpy us':>10} {'speedup':>8}")
    for label, (name, call_args) in cases(rng).items():
        fast = getattr(kernels, f"{name}_numba")
        slow = getattr(kernels, f"{name}_numpy")
        a, b = fast(*call_args), slow(*call_args)
        same = all(np.array_equal(p, q) for p, q in zip(a, b)) if isinstance(a, tuple) \
            else np.array_equal(a, b)
        assert same, f"{name}: backends disagree"
        t_fast = best_of(lambda: fast(*call_args), args.number)
        t_slow = best_of(lambda: slow(*call_args), max(1, args.number // 10))
        print(f"{label:<34} {t_fast * 1e6:>10.1f} {t_slow * 1e6:>10.1f} {t_slow / t_fast:>7.1f}x")

    if args.e2e:
        print("\ntoy training, 5 epochs:")
        for flag in ("0", "1"):
            env = dict(os.environ, CAPCOMPRESS_DISABLE_NUMBA=flag)
            out = subprocess.run([sys.executable, "-c", E2E_SNIPPET], env=env, check=True,
                                 capture_output=True, text=True).stdout.split()
            print(f"  {out[0]:<6} {float(out[1]):.2f}s")


if __name__ == "__main__":
    main()
