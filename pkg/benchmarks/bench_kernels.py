"""Time one training epoch per kernel on both backends.

Run with ``python benchmarks/bench_kernels.py [--n 10000] [--repeat 5]``.
The numba timings exclude compilation, which happens in a warm-up call.
"""
import argparse
import math
import timeit

import numpy as np

from moebma.kernels import ADAM, CLASSIFICATION, REGRESSION, get_backend


def cases(n, d, experts, batch):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(n, d))
    X[:, 0] = 1.0
    y_reg = rng.normal(size=n)
    y_cls = (rng.random(n) < 0.5).astype(float)
    perm = rng.permutation(n)
    n_batches = math.ceil(n / batch)
    P0 = rng.normal(0, 0.1, (3, experts, d))
    gate_eps = rng.normal(size=(n, experts))
    noise = rng.normal(size=(n_batches, d))
    vi_eps = rng.normal(size=(n_batches, 2, d))

    def moe(be, task, y):
        def run():
            P = P0.copy()
            be.moe_train_epoch(P, np.zeros_like(P), np.zeros_like(P), 0, X, y, perm, gate_eps, 2, task,
                               1e-3, batch, ADAM)
        return run

    def sghmc(be):
        def run():
            be.sghmc_epoch(np.full(d, 0.1), np.zeros(d), X, y_cls, perm, noise, 1e-4, 0.9, 1e-4, 1.0,
                           CLASSIFICATION, 1.0, batch, True)
        return run

    def vi(be):
        def run():
            P = np.stack([np.zeros(d), np.full(d, -3.0)])
            be.vi_epoch(P, np.zeros_like(P), np.zeros_like(P), 0, X, y_cls, perm, vi_eps, 1e-3, 0.1,
                        CLASSIFICATION, 1.0, batch)
        return run

    return {
        "moe regression epoch": lambda be: moe(be, REGRESSION, y_reg),
        "moe classification epoch": lambda be: moe(be, CLASSIFICATION, y_cls),
        "sghmc epoch": sghmc,
        "vi epoch": vi,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=10000)
    ap.add_argument("--d", type=int, default=9)
    ap.add_argument("--experts", type=int, default=4)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    backends = {"numpy": get_backend("numpy"), "numba": get_backend("numba")}
    print(f"n={args.n} d={args.d} experts={args.experts} batch={args.batch}, best of {args.repeat}")
    print(f"{'kernel':<26}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, make in cases(args.n, args.d, args.experts, args.batch).items():
        best = {}
        for label, be in backends.items():
            fn = make(be)
            fn()
            best[label] = min(timeit.repeat(fn, number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<26}{best['numpy']:>10.1f}{best['numba']:>10.1f}{best['numpy'] / best['numba']:>8.1f}x")


if __name__ == "__main__":
    main()
