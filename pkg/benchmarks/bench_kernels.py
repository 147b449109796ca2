"""Compare the compiled and numpy RK4 kernels.

Two workloads: the raw kernel on random coefficient matrices, and a full grid
reconstruction on the round 3-sphere chart with the kernel swapped in place.

    python3 benchmarks/bench_kernels.py [--repeat 3]
"""

import argparse
import time

import numpy as np

from bggprolong import _kernels_py, kernels, prolongation
from bggprolong.algebra import standard_module
from bggprolong.geometry import make_chart
from bggprolong.stencils import Grid


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def raw_kernel(backends, repeat):
    rng = np.random.default_rng(0)
    B, K, d, m = 2000, 100, 5, 5
    A = np.ascontiguousarray(rng.normal(size=(B, 2 * K + 1, d, d)) * 0.1)
    Y0 = np.ascontiguousarray(rng.normal(size=(B, d, m)))
    rows = {}
    for name, fn in backends.items():
        rows[name] = _best(lambda: np.asarray(fn(A, 1.0 / K, Y0)), repeat)
    return f"raw RK4, {B} rays x {K} steps, d={d}, m={m}", rows


def reconstruction(backends, repeat):
    chart = make_chart(3, "sphere")
    system = prolongation.build_closed_system_einstein(chart, module=standard_module(3))
    grid = Grid((0.0, 0.0, 0.0), 0.1, 13)
    rows = {}
    saved = prolongation.propagate
    try:
        for name, fn in backends.items():
            prolongation.propagate = fn
            rows[name] = _best(lambda: prolongation.reconstruct(system, np.eye(5), grid), repeat)
    finally:
        prolongation.propagate = saved
    return f"sphere reconstruction, {grid.points}^3 grid, 5 initial values", rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = {"python": _kernels_py.propagate}
    if kernels.BACKEND == "cython":
        backends["cython"] = kernels.propagate
    else:
        print("compiled kernel not built; timing the numpy fallback only")
    for bench in (raw_kernel, reconstruction):
        title, rows = bench(backends, args.repeat)
        print(title)
        ref = rows["python"][1]
        for name, (t, out) in rows.items():
            dev = float(np.abs(np.asarray(out) - ref).max())
            speed = rows["python"][0] / t
            print(f"  {name:7s} {t * 1e3:9.1f} ms   x{speed:5.2f}   max |diff| vs python {dev:.1e}")


if __name__ == "__main__":
    main()
