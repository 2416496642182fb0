"""Compiled vs pure-numpy chaos kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--n 8] [--samples 20000]

Both backends run on the same inputs: the Wick–Wagner–Platen terminal for
the standard Wick-exponential problem. Outputs are checked for equality
before timing. Set WICKAPPROX_PURE=1 to make the library itself use the
fallback; this script imports both modules directly.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from wickapprox import _pykernels
from wickapprox.chaos import Caps, _prefix_plan
from wickapprox.fnspace import GridSpec
from wickapprox.schemes import wick_wp
from wickapprox.solution import wick_exp_problem

try:
    from wickapprox import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def cases(n: int, samples: int, cap: int):
    poly = wick_wp(wick_exp_problem(), GridSpec(n), Caps(degree=cap)).terminal
    rng = np.random.default_rng(0)
    w = rng.standard_normal((samples, n)) * np.sqrt(1.0 / n)
    start, end = _prefix_plan(poly.exps)
    exps = np.ascontiguousarray(poly.exps)
    coefs = np.ascontiguousarray(poly.coefs)
    maxdeg = int(poly.exps.max())
    deg = poly.degrees.astype(np.int64)
    deg_sorted = np.sort(deg, kind="stable")
    few = np.ascontiguousarray(w[:16])
    return len(poly), {
        "eval_batch": lambda k: k.eval_batch(exps, coefs, start, end, w, poly.grid.delta, maxdeg),
        "eval_batch_16": lambda k: k.eval_batch(exps, coefs, start, end, few, poly.grid.delta, maxdeg),
        "hermite_table": lambda k: k.hermite_table(w.T.copy(), poly.grid.delta, 12),
        "degree_pairs": lambda k: k.degree_pairs(deg, deg_sorted, cap, False),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--n", type=int, default=8)
    ap.add_argument("--cap", type=int, default=8)
    ap.add_argument("--samples", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    terms, work = cases(args.n, args.samples, args.cap)
    print(f"chaos terms: {terms}, grid n={args.n}, samples={args.samples}")
    if _ckernels is None:
        print("compiled kernels not built; only the numpy fallback is timed")
    print(f"{'kernel':<15}{'numpy [ms]':>12}{'cython [ms]':>13}{'speedup':>9}  match")
    for name, call in work.items():
        py = min(timeit.repeat(lambda: call(_pykernels), number=1, repeat=args.repeat)) * 1e3
        if _ckernels is None:
            print(f"{name:<15}{py:12.2f}{'-':>13}{'-':>9}  -")
            continue
        cy = min(timeit.repeat(lambda: call(_ckernels), number=1, repeat=args.repeat)) * 1e3
        a, b = call(_pykernels), call(_ckernels)
        if isinstance(a, tuple):
            same = all(np.array_equal(x, y) for x, y in zip(a, b))
        else:
            same = np.array_equal(np.asarray(a), np.asarray(b))
        print(f"{name:<15}{py:12.2f}{cy:13.2f}{py / cy:9.1f}  {'yes' if same else 'NO'}")


if __name__ == "__main__":
    main()
