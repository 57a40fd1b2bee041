"""Compare the compiled and numpy MI kernels on one region's all-pairs workload.

Usage::

    python benchmarks/bench_mi_kernel.py [--cells 50] [--days 30] [--threads 1 4] [--repeat 3]
"""

import argparse
import os
import time

import numpy as np

from cellsync import kernels


def workload(n_cells, n_days, n_slots, missing_rate, seed):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_cells, n_days, n_slots))
    z[rng.random(z.shape) < missing_rate] = np.nan
    pairs = np.array([(i, j) for i in range(n_cells) for j in range(i + 1, n_cells)], dtype=np.intp)
    return z, pairs


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cells", type=int, default=50)
    ap.add_argument("--days", type=int, default=30)
    ap.add_argument("--slots", type=int, default=24)
    ap.add_argument("--bins", type=int, default=4)
    ap.add_argument("--missing-rate", type=float, default=0.0)
    ap.add_argument("--threads", type=int, nargs="+", default=[1, os.cpu_count() or 1])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    z, pairs = workload(args.cells, args.days, args.slots, args.missing_rate, 0)
    min_valid = args.slots
    prepared = kernels.prepare(z, args.bins)
    print(f"{len(pairs)} pairs x {args.days} days x {args.slots} slots, bins={args.bins}, "
          f"missing={args.missing_rate}")
    print(f"prepare: {best_time(lambda: kernels.prepare(z, args.bins), args.repeat) * 1e3:8.2f} ms")

    ref = None
    for backend in kernels.BACKENDS:
        for t in args.threads:
            def run():
                return kernels.pair_mi_batch(None, pairs, args.bins, True, min_valid, t, backend, prepared)

            out = run()
            if ref is None:
                ref = out
            diff = float(np.nanmax(np.abs(out[0] - ref[0])))
            secs = best_time(run, args.repeat)
            print(f"{backend:>7} threads={t:<3} {secs * 1e3:9.2f} ms  "
                  f"{len(pairs) / secs:12.0f} pairs/s  max|diff| {diff:.1e}")


if __name__ == "__main__":
    main()
