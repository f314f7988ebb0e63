#!/usr/bin/env python3
"""Time the numba SGD kernels against their interpreted fallback.

Both paths get identical inputs; the script fails if their outputs differ.

    python3 benchmarks/bench_kernels.py [--steps 20000] [--dim 32] [--repeat 3]
"""

import argparse
import sys
import time

import numpy as np

from sse_rec import USE_NUMBA
from sse_rec.kernels import bpr_sgd_epoch, mf_sgd_epoch


def _inputs(steps, dim, seed=0, nu=2000, ni=1000):
    rng = np.random.default_rng(seed)
    U = rng.normal(0, 0.1, (nu, dim))
    V = rng.normal(0, 0.1, (ni, dim))
    ku = rng.integers(0, nu, steps)
    ki = rng.integers(0, ni, steps)
    kn = rng.integers(0, ni, steps)
    r = rng.uniform(1, 5, steps)
    none = np.zeros((0, dim))
    return U, V, ku, ki, kn, r, none


def _time(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=20_000)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if not USE_NUMBA:
        print("numba disabled (SSE_REC_NUMBA=0); nothing to compare", file=sys.stderr)
        return 1

    U, V, ku, ki, kn, r, none = _inputs(args.steps, args.dim)
    cases = {
        "mf": lambda k, A, B: k(A, B, ku, ki, r, none, none, 0.01, 0.001, 1),
        "mf-batch64": lambda k, A, B: k(A, B, ku, ki, r, none, none, 0.01, 0.001, 64),
        "bpr": lambda k, A, B: k(A, B, ku, ki, kn, none, none, none, 0.05, 0.001, 1),
    }
    kernels = {"mf": mf_sgd_epoch, "mf-batch64": mf_sgd_epoch, "bpr": bpr_sgd_epoch}

    print(f"steps={args.steps} dim={args.dim} repeat={args.repeat}")
    print(f"{'kernel':>11}  {'python (s)':>10}  {'numba (s)':>10}  {'speedup':>8}  {'equal':>5}")
    ok = True
    for name, call in cases.items():
        k = kernels[name]
        call(k, U.copy(), V.copy())  # compile outside the timed region

        def run(fn):
            A, B = U.copy(), V.copy()
            loss = call(fn, A, B)
            return loss, A, B

        t_py, (loss_py, A_py, B_py) = _time(lambda: run(k.py_func), max(1, args.repeat // 3))
        t_nb, (loss_nb, A_nb, B_nb) = _time(lambda: run(k), args.repeat)
        equal = loss_py == loss_nb and np.array_equal(A_py, A_nb) and np.array_equal(B_py, B_nb)
        ok &= equal
        print(f"{name:>11}  {t_py:>10.3f}  {t_nb:>10.4f}  {t_py / t_nb:>7.0f}x  {'yes' if equal else 'NO':>5}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
