"""Compiled vs numpy kernels: one-sided Jacobi SVD and CSR products.

    python3 benchmarks/bench_kernels.py [--sizes 100,200,400] [--repeat 3]
"""

import argparse
import time

import numpy as np

from headrank import _backend
from headrank.linalg import SparseMatrix, svd_dense


def _best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _random_csr(rows, cols, density, rng):
    nnz_per_row = max(1, int(density * cols))
    indptr = np.arange(rows + 1, dtype=np.int64) * nnz_per_row
    indices = np.sort(
        np.stack([rng.choice(cols, nnz_per_row, replace=False) for _ in range(rows)]), axis=1
    ).ravel().astype(np.int64)
    return SparseMatrix(rows, cols, indptr, indices, rng.random(indices.size))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="100,200,400")
    ap.add_argument("--csr-rows", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    backends = _backend.available()
    print(f"backends: {', '.join(backends)}")
    print(f"{'kernel':<28}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")

    def row(label, fn):
        times = {}
        for b in backends:
            with _backend.use_backend(b):
                times[b] = _best_of(fn, args.repeat)
        speed = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        print(f"{label:<28}" + "".join(f"{times[b]:>11.4f}s" for b in backends) + f"{speed:>9.1f}x")

    for n in (int(s) for s in args.sizes.split(",")):
        a = rng.standard_normal((n, n))
        row(f"jacobi svd {n}x{n}", lambda: svd_dense(a, want_factors=False))

    m = _random_csr(args.csr_rows, 5000, 0.002, rng)
    x = rng.standard_normal((m.cols, 30))
    y = rng.standard_normal((m.rows, 30))
    row(f"csr matmat nnz={m.nnz}", lambda: m.matmat(x))
    row(f"csr rmatmat nnz={m.nnz}", lambda: m.rmatmat(y))


if __name__ == "__main__":
    main()
