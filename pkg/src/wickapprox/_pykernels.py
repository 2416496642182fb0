"""Pure numpy implementations of the hot chaos kernels.

The compiled module ``_ckernels`` provides the same functions with the same
floating-point operation order; ``_backend`` picks one at import.
"""

from __future__ import annotations

import numpy as np

_CHUNK = 16384


def hermite_table(w: np.ndarray, delta: float, maxdeg: int) -> np.ndarray:
    """Array H[a, ...] = h^a_Δ(w) for a = 0..maxdeg."""
    out = np.empty((maxdeg + 1,) + w.shape)
    out[0] = 1.0
    if maxdeg >= 1:
        out[1] = w
    for m in range(1, maxdeg):
        out[m + 1] = w * out[m] - (m * delta) * out[m - 1]
    return out


def eval_batch(exps, coefs, start, end, w, delta, maxdeg):
    """Evaluate Σ_t c_t Π_i h^{α_ti}_Δ(w_si) for every sample row s of w.

    Terms are visited in stored order; the running prefix product is reused
    from position ``start[t]`` (first index where term t differs from term
    t−1, capped by where that term's prefix stops) up to ``end[t]`` (one past
    the last nonzero exponent).
    """
    w = np.ascontiguousarray(w, dtype=float)
    n_samples, n = w.shape
    out = np.zeros(n_samples)
    exps = np.asarray(exps)
    for lo in range(0, n_samples, _CHUNK):
        hi = min(lo + _CHUNK, n_samples)
        table = hermite_table(w[lo:hi].T, delta, maxdeg)  # (maxdeg+1, n, chunk)
        prefix = np.ones((n + 1, hi - lo))
        acc = np.zeros(hi - lo)
        for t in range(exps.shape[0]):
            row = exps[t]
            for i in range(start[t], end[t]):
                np.multiply(prefix[i], table[row[i], i], out=prefix[i + 1])
            acc += coefs[t] * prefix[end[t]]
        out[lo:hi] = acc
    return out


def degree_pairs(deg_a: np.ndarray, deg_b_sorted: np.ndarray, cap: int, above: bool = False):
    """Index pairs (i, j) with deg_a[i] + deg_b[j] ≤ cap (or > cap when ``above``).

    ``deg_b_sorted`` must be nondecreasing. Pairs are emitted with i in stored
    order and j ascending.
    """
    deg_a = np.asarray(deg_a, dtype=np.int64)
    deg_b = np.asarray(deg_b_sorted, dtype=np.int64)
    limit = np.searchsorted(deg_b, cap - deg_a, side="right")
    if above:
        lo = limit
        hi = np.full_like(limit, deg_b.size)
    else:
        lo = np.zeros_like(limit)
        hi = limit
    counts = hi - lo
    total = int(counts.sum())
    ia = np.repeat(np.arange(deg_a.size, dtype=np.int64), counts)
    offsets = np.repeat(np.cumsum(counts) - counts, counts)
    ib = np.arange(total, dtype=np.int64) - offsets + np.repeat(lo, counts)
    return ia, ib
