"""Compare the compiled and numpy kernels on sampler-sized inputs.

    python benchmarks/bench_kernels.py [--sizes 256 1024 4096] [--rows 32]
"""

import argparse
import timeit

import numpy as np

from heatvar import _backend
from heatvar.sampler import SeedSpec, build_increment_covariance, factorize, sample_batch


def best_of(fn, repeat=5):
    number = 1
    while timeit.timeit(fn, number=number) < 0.05:
        number *= 2
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def kernel_times(n, rows):
    rng = np.random.default_rng(n)
    factor = factorize(build_increment_covariance(n))
    z = rng.standard_normal((rows, n))
    terms = rng.standard_normal((rows, n))
    out = {}
    for name in _backend.available():
        _backend.use(name)
        out[name] = (
            best_of(lambda: _backend.lower_apply(factor.lower, z)),
            best_of(lambda: _backend.compensated_cumsum(terms)),
            best_of(lambda: sample_batch(factor, SeedSpec(1), rows), repeat=3),
        )
    return out


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[256, 1024, 4096])
    p.add_argument("--rows", type=int, default=32, help="paths per block")
    args = p.parse_args()
    previous = _backend.current()
    print(f"backends: {', '.join(_backend.available())}; {args.rows} rows per call; times in ms")
    print(f"{'n':>6} {'backend':>9} {'lower_apply':>12} {'cumsum':>10} {'sample':>10}")
    try:
        for n in args.sizes:
            for name, times in kernel_times(n, args.rows).items():
                la, cs, sb = (1e3 * t for t in times)
                print(f"{n:>6} {name:>9} {la:>12.3f} {cs:>10.3f} {sb:>10.3f}")
    finally:
        _backend.use(previous)


if __name__ == "__main__":
    main()
