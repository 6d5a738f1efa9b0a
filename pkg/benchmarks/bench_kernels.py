"""Compare the numba and numpy backends of the hot kernels.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Both variants are imported directly from ``vokit._kernels`` so one process
measures both, regardless of VOKIT_DISABLE_NUMBA.
"""
import argparse
import time

import numpy as np

from vokit import _kernels as K


def best_of(fn, args, repeat):
    fn(*args)  # warm-up / JIT compile
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    E = rng.normal(size=(3, 3))
    for n in (1_000, 100_000):
        x0 = rng.normal(size=(n, 2))
        x1 = rng.normal(size=(n, 2))
        yield f"sampson n={n}", "sampson", (E, x0, x1)
    for n in (500, 2_000):
        a = rng.uniform(0, 640, size=(n, 2))
        b = a + rng.normal(scale=1.0, size=(n, 2))
        yield f"mutual_nearest n={n}", "mutual_nearest", (a, b, 3.0)
    for n, d in ((500, 128), (2_000, 256)):
        q = rng.normal(size=(n, d))
        db = rng.normal(size=(n, d))
        yield f"two_nearest n={n} d={d}", "two_nearest", (q, db)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    print(f"numba available: {K.NUMBA_AVAILABLE}; active backend: {K.BACKEND}")
    if not K.NUMBA_AVAILABLE:
        print("numba disabled or missing; the numba column re-runs the numpy path")
    print(f"{'kernel':<28}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    rng = np.random.default_rng(args.seed)
    for label, name, data in cases(rng):
        t_np = best_of(getattr(K, name + "_numpy"), data, args.repeat)
        t_nb = best_of(getattr(K, name + "_numba"), data, args.repeat)
        print(f"{label:<28}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
