"""Benchmark the numba kernel path against the pure-numpy fallback.

Run with the default (numba) dispatch:

    python3 benchmarks/bench_kernels.py

The numpy fallback columns are always measured from the private _*_numpy
implementations, so one invocation compares both paths.  Setting
WGFLOW_NO_NUMBA=1 makes the public functions dispatch to numpy as well,
which this script reports.
"""

import time

import numpy as np

from wgflow import kernels


def bench(fn, args, repeat=5, min_time=0.05):
    fn(*args)  # warm-up (numba compilation)
    best = np.inf
    for _ in range(repeat):
        n = 0
        start = time.perf_counter()
        while True:
            fn(*args)
            n += 1
            elapsed = time.perf_counter() - start
            if elapsed > min_time:
                break
        best = min(best, elapsed / n)
    return best


def main():
    rng = np.random.default_rng(0)
    print(f"dispatch path: {'numba' if kernels.USING_NUMBA else 'numpy'} "
          f"(WGFLOW_NO_NUMBA toggles)")
    header = f"{'kernel':28s} {'N':>6s} {'public':>10s} {'numpy':>10s} {'speedup':>8s}"
    print(header)
    print("-" * len(header))
    for N in (400, 1600, 6400):
        pos = rng.standard_normal((N, 2))
        masses = rng.uniform(0.5, 1.5, N)
        x = np.sort(rng.standard_normal(N))
        cases = [
            ("mollify", kernels.mollify, kernels._mollify_numpy,
             (pos, masses, 0.2)),
            ("mollify_weighted_grads", kernels.mollify_weighted_grads,
             kernels._mollify_weighted_grads_numpy,
             (pos, masses, 0.2, masses.copy())),
            ("newtonian_force", kernels.newtonian_force,
             kernels._newtonian_force_numpy, (pos, masses, 0.5)),
            ("newtonian_energy", kernels.newtonian_energy,
             kernels._newtonian_energy_numpy, (pos, masses, 0.5)),
            ("min_pairwise_distance", kernels.min_pairwise_distance,
             kernels._min_pairwise_distance_numpy, (pos,)),
            ("reciprocal_gap_sum", kernels.reciprocal_gap_sum,
             kernels._reciprocal_gap_sum_numpy, (x,)),
        ]
        for name, pub, ref, args in cases:
            t_pub = bench(pub, args)
            t_ref = bench(ref, args)
            print(f"{name:28s} {N:6d} {t_pub * 1e3:9.3f}ms {t_ref * 1e3:9.3f}ms "
                  f"{t_ref / t_pub:7.2f}x")
        print()


if __name__ == "__main__":
    main()
