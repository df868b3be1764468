"""Benchmark the compiled kernels against the pure-Python (numpy) fallback.

Times the three hot paths: elementwise chi-square transforms, the G_1
partial-convolution kernel, the Monte Carlo scan maximum, and an
end-to-end tail bound.  Usage:

    python benchmarks/bench_backends.py [--quick]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from cladescan._backend import get_backend
from cladescan._term_engine import _gl_g1


def timer(fn, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(quick: bool):
    n = 200_000 if quick else 2_000_000
    rng = np.random.default_rng(0)
    x = rng.uniform(0.0, 40.0, n)
    v = rng.uniform(0.0, 25.0, n // 20)
    t = v * rng.uniform(0.0, 1.0, n // 20)
    nodes = _gl_g1(48)
    z2 = rng.standard_normal((n // 20, 99)) ** 2
    trips = rng.integers(0, 99, size=(97, 3)).astype(np.int64)

    rows = []
    for name in ("python", "compiled"):
        try:
            k = get_backend(name)
        except ImportError:
            print(f"[{name} backend unavailable]")
            continue
        rows.append((name, "f3cdf elementwise", n,
                     timer(lambda: k.f3cdf(x))))
        rows.append((name, "g1 kernel (48-node)", t.size,
                     timer(lambda: k.g1(t, v, *nodes))))
        rows.append((name, "scan_max (97 windows)", z2.shape[0],
                     timer(lambda: k.scan_max(z2, trips))))
    return rows


def bench_bound(quick: bool):
    """End-to-end tail bound under each backend (subprocess so the import-
    time backend selection is exercised)."""
    script = (
        "import time, cladescan as cs\n"
        "tree = cs.random_binary_tree({k}, 501)\n"
        "trips = cs.enumerate_triplets(tree)\n"
        "part = cs.build_partition(trips, tree)\n"
        "t0 = time.perf_counter()\n"
        "cs.bound_pvalue(None, trips, part, 15.0, include_diagnostic=False)\n"
        "print(time.perf_counter() - t0)\n").format(k=20 if quick else 50)
    rows = []
    for name in ("python", "compiled"):
        env = dict(os.environ, CLADESCAN_BACKEND=name)
        res = subprocess.run([sys.executable, "-c", script], env=env,
                             capture_output=True, text=True)
        if res.returncode != 0:
            print(f"[bound benchmark unavailable on {name}]")
            continue
        rows.append((name, "bound_pvalue end-to-end", 1,
                     float(res.stdout.strip())))
    return rows


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--quick", action="store_true",
                        help="small sizes for smoke testing")
    args = parser.parse_args()
    rows = bench_kernels(args.quick) + bench_bound(args.quick)
    print(f"{'backend':<10} {'kernel':<28} {'n':>9} {'seconds':>10}")
    for name, kernel, n, secs in rows:
        print(f"{name:<10} {kernel:<28} {n:>9} {secs:>10.4f}")


if __name__ == "__main__":
    main()
