"""Benchmark the compiled noise kernels against the numpy fallback.

Run:  python benchmarks/bench_noise.py [--sizes 1e5,1e6,1e7]

Both backends implement the identical counter-based generator (uniform
outputs are bit-identical); this only measures throughput. Numbers printed
are the best of five timed repetitions.
"""

import argparse
import time

from softbits import _kernels
from softbits._kernels import fallback


def best_of(fn, repeats=5):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--sizes", default="1e5,1e6,1e7")
    args = parser.parse_args()
    sizes = [int(float(s)) for s in args.sizes.split(",")]

    if _kernels.BACKEND != "compiled":
        print("compiled extension not available; benchmarking the fallback only")
        backends = [("fallback", fallback)]
    else:
        backends = [("compiled", _kernels._impl), ("fallback", fallback)]

    key = _kernels.stream_key(1, 0)
    kernels = ["bulk_uniform", "bulk_gumbel", "bulk_logistic"]

    print(f"{'kernel':<14} {'n':>10} " + " ".join(f"{name + ' (ms)':>15}" for name, _ in backends)
          + ("  speedup" if len(backends) == 2 else ""))
    for kernel in kernels:
        for n in sizes:
            times = [best_of(lambda impl=impl: getattr(impl, kernel)(key, 0, n))
                     for _, impl in backends]
            row = f"{kernel:<14} {n:>10} " + " ".join(f"{t * 1e3:>15.2f}" for t in times)
            if len(times) == 2:
                row += f"  {times[1] / times[0]:>6.2f}x"
            print(row)


if __name__ == "__main__":
    main()
