"""Time the compiled and pure-Python BCD kernels on identical problems.

Usage: python3 benchmarks/bench_kernels.py [--repeats 5] [--iters 200]

Prints one line per problem size with the median wall time per backend, the
speed-up, and the largest coordinate difference between the two outputs.
"""
import argparse
import statistics
import time

import numpy as np

from ppdmkit import kernels
from ppdmkit.geometry import random_setup
from ppdmkit.ppdm import add_noise, build_ppdm
from ppdmkit.solver import random_init

SIZES = [(2, 5, 15), (3, 6, 20), (3, 8, 40), (3, 12, 100)]


def case(dim, k, n, seed=0):
    rng = np.random.default_rng(seed)
    m = add_noise(build_ppdm(random_setup(dim, k, n, rng)), 0.05, seed)
    init = random_init(m, rng)
    fix = np.zeros(k, np.uint8)
    fix[0] = 1
    return m.entries, m.weights(), init.waypoints, init.normals, init.offsets, fix, fix.copy()


def timed(args, iters, backend, repeats):
    times, out = [], None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = kernels.run_bcd(*args, iters, 0.0, 0.0, backend=backend)
        times.append(time.perf_counter() - t0)
    return statistics.median(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--iters", type=int, default=200)
    opts = ap.parse_args()
    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)}; {opts.iters} sweeps, median of {opts.repeats}")
    if "cython" not in backends:
        print("compiled kernel not built; only the Python timing is shown")
    print(f"{'d':>2} {'K':>3} {'N':>4} {'python s':>10} {'cython s':>10} {'speed-up':>9} {'max diff':>9}")
    for dim, k, n in SIZES:
        args = case(dim, k, n)
        t_py, out_py = timed(args, opts.iters, "python", opts.repeats)
        if "cython" in backends:
            t_cy, out_cy = timed(args, opts.iters, "cython", opts.repeats)
            diff = max(float(np.max(np.abs(a - b))) for a, b in zip(out_py[:3], out_cy[:3]))
            print(f"{dim:>2} {k:>3} {n:>4} {t_py:>10.4f} {t_cy:>10.4f} {t_py / t_cy:>8.1f}x {diff:>9.1e}")
        else:
            print(f"{dim:>2} {k:>3} {n:>4} {t_py:>10.4f} {'-':>10} {'-':>9} {'-':>9}")


if __name__ == "__main__":
    main()
