"""Time one dual coordinate-descent epoch under both kernels.

    python3 benchmarks/bench_dual_cd.py [--rows 4000] [--cols 30] [--repeat 20]

Rows mimic the filtered_plus_clinical design: sparse concept counts next to
dense one-hot clinical columns.
"""

import argparse
import time

import numpy as np
import scipy.sparse as sp

from distrec import kernels
from distrec.learner import _augment


def build(rows, cols, seed):
    rng = np.random.default_rng(seed)
    x = sp.random(rows, cols, density=0.3, random_state=seed, format="csr")
    y = np.where(rng.random(rows) < 0.1, 1.0, -1.0)
    xa = _augment(x)
    qdiag = np.asarray(xa.multiply(xa).sum(axis=1)).ravel()
    return xa.data, xa.indices.astype(np.int64), xa.indptr.astype(np.int64), y, qdiag


def time_epochs(fn, parts, repeat, seed):
    data, indices, indptr, y, qdiag = parts
    n, d = len(y), int(indices.max()) + 1
    alpha, w = np.zeros(n), np.zeros(d)
    rng = np.random.default_rng(seed)
    orders = [rng.permutation(n).astype(np.int64) for _ in range(repeat)]
    fn(data, indices, indptr, y, qdiag, orders[0], alpha.copy(), w.copy(), 1.0)  # warm-up / compile
    start = time.perf_counter()
    for order in orders:
        fn(data, indices, indptr, y, qdiag, order, alpha, w, 1.0)
    return (time.perf_counter() - start) / repeat


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=4000)
    ap.add_argument("--cols", type=int, default=30)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    parts = build(args.rows, args.cols, args.seed)
    py = time_epochs(kernels._cd_epoch_py, parts, args.repeat, args.seed)
    jit = time_epochs(kernels._cd_epoch_jit, parts, args.repeat, args.seed)
    print(f"rows={args.rows} cols={args.cols} active backend={kernels.BACKEND}")
    print(f"numpy  epoch: {py * 1e3:9.3f} ms")
    print(f"numba  epoch: {jit * 1e3:9.3f} ms  ({py / jit:.1f}x)")


if __name__ == "__main__":
    main()
