"""Timing comparison of the compiled and pure-Python hot kernels.

Both implementations are imported directly (the package itself picks one at
import time; see dsfc._backend), so a single run reports the side-by-side
cost of every kernel on identical inputs.

Usage:
    python benchmarks/bench_kernels.py [--sizes 64,1024,65536] [--repeats 200]
"""

import argparse
import timeit

import numpy as np

from dsfc import _kernels_py

try:
    from dsfc import _kernels as compiled
except ImportError:
    compiled = None


def make_inputs(size, rng):
    x = rng.integers(1, 200, size=size, dtype=np.int64)
    y = rng.integers(1, 200, size=size, dtype=np.int64)
    return x, y


def bench_one(fn, args, repeats):
    timer = timeit.Timer(lambda: fn(*args))
    loops = max(1, 2000 // max(1, args[0].size // 256))
    best = min(timer.repeat(repeat=repeats, number=loops))
    return best / loops * 1e6  # microseconds per call


def rows_for_size(size, repeats, rng):
    x, y = make_inputs(size, rng)
    cases = (
        ("abs_error_sum", (x, y)),
        ("clipped_error_sum", (x, y, 5)),
        ("truncate_overflow", (x, 8)),
        ("grid_quantize", (np.minimum(x, 9), 1, 8)),
    )
    rows = []
    for name, args in cases:
        pure_us = bench_one(getattr(_kernels_py, name), args, repeats)
        if compiled is None:
            rows.append((name, size, pure_us, None, None))
            continue
        comp_us = bench_one(getattr(compiled, name), args, repeats)
        rows.append((name, size, pure_us, comp_us, pure_us / comp_us))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="64,1024,65536",
                        help="comma-separated block sizes to time")
    parser.add_argument("--repeats", type=int, default=20,
                        help="timing repeats per case (best is reported)")
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    sizes = [int(s) for s in args.sizes.split(",")]
    rng = np.random.default_rng(args.seed)

    if compiled is None:
        print("compiled extension not built; timing the pure backend only")
    header = f"{'kernel':<20}{'size':>8}{'pure us':>12}{'compiled us':>14}{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for size in sizes:
        for name, sz, pure_us, comp_us, speedup in rows_for_size(size, args.repeats, rng):
            comp_txt = f"{comp_us:14.2f}" if comp_us is not None else f"{'-':>14}"
            speed_txt = f"{speedup:9.1f}x" if speedup is not None else f"{'-':>10}"
            print(f"{name:<20}{sz:>8}{pure_us:>12.2f}{comp_txt}{speed_txt}")


if __name__ == "__main__":
    main()
