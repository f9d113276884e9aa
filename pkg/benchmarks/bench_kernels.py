"""Benchmark the numba kernels against the pure-numpy fallback.

Times the three correlation adjoints and max pooling on shapes matching the
default architecture's first and middle layers, and reports throughput for
both implementations. Run:

    python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from sincfront import kernels


def _time(fn, repeats):
    fn()                      # warm-up (JIT compilation, caches)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


CASES = [
    # (label, batch, in_ch, out_ch, kernel, t_in)
    ("frontend  F=80 L=251 T=3200", 32, 1, 80, 251, 3200),
    ("mid conv  C=60 K=5   T=983", 32, 60, 60, 5, 983),
    ("small     F=16 L=65  T=1600", 32, 1, 16, 65, 1600),
]


def run(repeats):
    rng = np.random.default_rng(0)
    impls = kernels.available_impls()
    print(f"implementations: {', '.join(impls)}   (default: {kernels.DEFAULT_IMPL})")
    header = f"{'case':<32} {'op':<14}" + "".join(f"{impl:>12}" for impl in impls)
    print(header)
    print("-" * len(header))
    for label, b, ci, co, k, t_in in CASES:
        x = rng.standard_normal((b, ci, t_in))
        w = rng.standard_normal((co, ci, k))
        t_out = t_in - k + 1
        up = rng.standard_normal((b, co, t_out))
        macs = b * co * ci * k * t_out
        ops = {
            "forward": lambda impl: kernels.corr1d_forward(x, w, impl=impl),
            "grad_weights": lambda impl: kernels.corr1d_grad_weights(x, up, k, impl=impl),
            "grad_input": lambda impl: kernels.corr1d_grad_input(up, w, impl=impl),
        }
        for op_name, op in ops.items():
            cells = []
            for impl in impls:
                secs = _time(lambda: op(impl), repeats)
                cells.append(f"{macs / secs / 1e9:>9.2f}G/s")
            print(f"{label:<32} {op_name:<14}" + "".join(f"{c:>12}" for c in cells))
        pooled = rng.standard_normal((b, co, t_out))
        cells = []
        for impl in impls:
            secs = _time(lambda: kernels.maxpool1d_forward(pooled, 3, impl=impl), repeats)
            cells.append(f"{pooled.size / secs / 1e6:>9.1f}M/s")
        print(f"{label:<32} {'maxpool':<14}" + "".join(f"{c:>12}" for c in cells))
    print()
    print("G/s = 1e9 multiply-accumulates per second; M/s = 1e6 elements per second.")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    run(args.repeats)
