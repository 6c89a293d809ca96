"""Time the compiled Goursat kernels against the numpy fallback.

    python benchmarks/bench_kernels.py --n 40 --length 15 --repeats 3
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from speedrs import _fallback
from speedrs.sigkernel import GoursatConfig, StaticKernel, refine

try:
    from speedrs import _kernels
except ImportError:  # not built
    _kernels = None


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=40, help="paths per side")
    ap.add_argument("--length", type=int, default=15)
    ap.add_argument("--dyadic-order", type=int, default=1)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    t = np.linspace(0.0, 1.0, args.length)
    walk = np.cumsum(rng.normal(0.0, 0.2, (2 * args.n, args.length)), axis=1)
    paths = refine(np.stack([np.broadcast_to(t, walk.shape), walk], axis=-1), args.dyadic_order)
    X, Y = paths[: args.n], paths[args.n :]
    k, cfg = StaticKernel("rbf", 0.5), GoursatConfig(args.dyadic_order, "second")
    stride = 2**args.dyadic_order
    delta = rng.normal(0.0, 0.05, (args.n * args.n, paths.shape[1] - 1, paths.shape[1] - 1))

    cases = {
        "pairs, terminal": lambda m: m.goursat_pairs(X, Y, k.code, k.sigma, cfg.scheme_code, 0, False),
        "pairs, windows": lambda m: m.goursat_pairs(X, X, k.code, k.sigma, cfg.scheme_code, stride, True),
        "increments": lambda m: m.goursat_increments(delta, cfg.scheme_code),
    }
    print(f"{args.n} x {args.n} paths, {paths.shape[1]} grid points after refinement")
    print(f"{'case':<18}{'numpy [s]':>12}{'cython [s]':>12}{'speedup':>10}{'max abs diff':>15}")
    for name, call in cases.items():
        t_py, ref = best_of(lambda: call(_fallback), args.repeats)
        if _kernels is None:
            print(f"{name:<18}{t_py:>12.4f}{'n/a':>12}")
            continue
        t_cy, out = best_of(lambda: call(_kernels), args.repeats)
        diff = float(np.max(np.abs(out - ref)))
        print(f"{name:<18}{t_py:>12.4f}{t_cy:>12.4f}{t_py / t_cy:>10.1f}{diff:>15.2e}")


if __name__ == "__main__":
    main()
