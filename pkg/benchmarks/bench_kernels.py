"""Benchmark the compiled kernel extension against the pure-Python fallback.

Runs both backends on the same inputs, checks they agree, and prints a
speedup table. Usage: python3 benchmarks/bench_kernels.py [--quick]
"""

import argparse
import sys
import time

import numpy as np

from manigen import graph, tensor
from manigen.kernels import _py

try:
    from manigen.kernels import _speedups
except ImportError:
    _speedups = None


def _time(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_dijkstra(n, k, sources, repeats):
    roll = tensor.make_swiss_roll(n, 0.0, seed=3)
    g = graph.knn_graph(roll.points, k)
    rows, cols, w = graph.symmetrized_edges(g)
    indptr, indices, weights = graph._csr_from_edges(g.n, rows, cols, w)
    out_py = np.empty((sources, n))
    out_cy = np.empty((sources, n))

    def run(mod, out):
        for s in range(sources):
            mod.dijkstra_csr(indptr, indices, weights, s, out[s])

    t_py = _time(lambda: run(_py, out_py), repeats)
    row = {"kernel": f"dijkstra n={n} k={k} x{sources} sources", "python": t_py}
    if _speedups is not None:
        t_cy = _time(lambda: run(_speedups, out_cy), repeats)
        agree = np.array_equal(out_py, out_cy)
        row.update(compiled=t_cy, speedup=t_py / t_cy, agree=agree)
    return row


def bench_bh(n, d, k, theta, repeats):
    rng = np.random.default_rng(5)
    Y = rng.standard_normal((n, d)) * 10.0
    rows = np.repeat(np.arange(n), k)
    cols = rng.integers(0, n, n * k)
    cols = np.where(cols == rows, (cols + 1) % n, cols)
    vals = rng.uniform(0.0, 1.0, n * k)
    indptr = np.arange(0, n * k + 1, k, dtype=np.int32)
    indices = cols.astype(np.int32)
    vals = np.ascontiguousarray(vals)

    buf = [np.zeros((n, d)) for _ in range(4)]

    def run(mod, a, r):
        return mod.bh_forces(Y, indptr, indices, vals, theta, a, r)

    t_py = _time(lambda: run(_py, buf[0], buf[1]), repeats)
    row = {"kernel": f"bh_forces n={n} d={d} theta={theta}", "python": t_py}
    if _speedups is not None:
        t_cy = _time(lambda: run(_speedups, buf[2], buf[3]), repeats)
        z_py = run(_py, buf[0], buf[1])
        z_cy = run(_speedups, buf[2], buf[3])
        agree = (
            abs(z_py - z_cy) <= 1e-9 * abs(z_py)
            and np.allclose(buf[0], buf[2], rtol=1e-9, atol=1e-12)
            and np.allclose(buf[1], buf[3], rtol=1e-9, atol=1e-12)
        )
        row.update(compiled=t_cy, speedup=t_py / t_cy, agree=agree)
    return row


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true", help="smaller sizes, 1 repeat")
    args = parser.parse_args(argv)

    repeats = 1 if args.quick else 3
    if args.quick:
        rows = [
            bench_dijkstra(500, 10, 20, repeats),
            bench_bh(1000, 2, 20, 0.5, repeats),
        ]
    else:
        rows = [
            bench_dijkstra(2000, 10, 50, repeats),
            bench_bh(3000, 2, 30, 0.5, repeats),
            bench_bh(2000, 3, 30, 0.5, repeats),
        ]

    if _speedups is None:
        print("compiled extension not available; python timings only")
    ok = True
    for row in rows:
        line = f"{row['kernel']:<42} python {row['python']*1e3:9.2f} ms"
        if "compiled" in row:
            line += (
                f"   compiled {row['compiled']*1e3:9.2f} ms"
                f"   speedup {row['speedup']:6.1f}x"
                f"   agree={row['agree']}"
            )
            ok = ok and row["agree"]
        print(line)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
