"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 3] [--delta 0.0625]

Each row reports the best wall time over ``--repeat`` runs per backend and
confirms the two backends produced identical (or rounding-equal) output.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from tubelab import kernels
from tubelab.arrangements import gen_bush, gen_direction_separated
from tubelab.functionals import multilinear_kakeya_lhs, trilinear_functional, union_volume
from tubelab.geometry import voxelize_tubes


def _best(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return a.shape == b.shape and np.allclose(a, b, rtol=1e-12, atol=0)
    return np.isclose(a, b, rtol=1e-12, atol=0)


def workloads(delta):
    sep = gen_direction_separated(4, delta, seed=0)
    bush = gen_bush([0, 0, 0, 0], 48, delta, seed=0)
    fams = [gen_bush([0, 0, 0, 0], 12, delta, seed=k, axis=np.eye(4)[k], spread=0.3) for k in range(3)]
    return [
        (f"voxelize {len(sep)} tubes", lambda: voxelize_tubes(sep.tubes, sep.grid)),
        ("union_volume separated", lambda: union_volume(sep)),
        ("trilinear bush(48)", lambda: trilinear_functional(bush)),
        ("trilinear separated", lambda: trilinear_functional(sep)),
        ("multilinear 3x12 bushes", lambda: multilinear_kakeya_lhs(*fams)),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--delta", type=float, default=1 / 16)
    args = ap.parse_args(argv)
    if not kernels.compiled_available():
        raise SystemExit("compiled kernels are not built; reinstall with a C compiler and Cython available")
    print(f"delta={args.delta:g} repeat={args.repeat}")
    print(f"{'workload':<28} {'compiled s':>11} {'python s':>11} {'speedup':>8}  same")
    previous = kernels.BACKEND
    try:
        for name, fn in workloads(args.delta):
            kernels.use_backend("compiled")
            tc, oc = _best(fn, args.repeat)
            kernels.use_backend("python")
            tp, op = _best(fn, args.repeat)
            print(f"{name:<28} {tc:>11.4f} {tp:>11.4f} {tp / tc:>8.1f}  {bool(_same(oc, op))}")
    finally:
        kernels.use_backend(previous)


if __name__ == "__main__":
    main()
