"""Time the numba and numpy implementations of the hot kernels.

Run ``python benchmarks/bench_backends.py``; each kernel is warmed up once
(so JIT compilation is excluded) and then timed with :mod:`timeit`.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from regstruct.cumulants import rgs_array
from regstruct.kernels import split_kernel
from regstruct.roughpaths import ControlledPath, rough_integral, second_level_from_smooth, synthetic_holder_path
from regstruct.solver import horner


def cases():
    rng = np.random.default_rng(0)
    spec = split_kernel(3, N=4)
    t = rng.uniform(1e-3, 0.9, 200_000)
    x = rng.uniform(-0.6, 0.6, (200_000, 3))
    u = rng.standard_normal((256, 256))
    coeffs = [0.0, 1.0, 0.0, -1.0, 0.0, -0.1]
    W = synthetic_holder_path(1 << 14, 0.4, m=2)
    WW = second_level_from_smooth(W)
    Z = ControlledPath(np.cos(W.values), np.zeros((len(W.times), 2, 2)) + 0.3)
    return {
        "kernel K (2e5 points)": lambda b: spec.K(t, x, backend=b),
        "horner drift (256^2)": lambda b: horner(u, coeffs, b),
        "rough integral (2^14 steps)": lambda b: rough_integral(Z, W, WW, check=False, backend=b),
        "set partitions n=10": lambda b: rgs_array(10, b),
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    print(f"{'kernel':32s} {'numba [ms]':>12s} {'numpy [ms]':>12s} {'speedup':>8s}")
    for name, fn in cases().items():
        times = {}
        for b in ("numba", "numpy"):
            fn(b)
            times[b] = min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:32s} {times['numba']:12.2f} {times['numpy']:12.2f} {times['numpy'] / times['numba']:8.1f}")


if __name__ == "__main__":
    main()
