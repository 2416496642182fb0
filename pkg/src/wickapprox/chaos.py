"""Finite Wiener chaos over the n Brownian increments of a grid.

A :class:`ChaosPoly` stores Σ_α a_α M_α with Wick monomials
M_α = Π_i h^{α_i}_Δ(Δ_i W). Terms are kept unique and sorted
lexicographically (variable 0 most significant). Monomials are orthogonal
with E[M_α²] = Π_i α_i! Δ^{α_i}.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from itertools import product as iproduct
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._backend import kernels
from .fnspace import GridSpec

__all__ = [
    "Caps",
    "ChaosPoly",
    "ChaosError",
    "hermite_eval",
    "hermite_table",
    "wick_mul",
    "ordinary_mul",
    "wick_power_linear",
    "wick_exp",
    "eval_at",
    "expectation",
    "inner_product",
    "norm2",
    "project_level",
    "gamma",
    "s_transform",
    "partial",
    "total_degree_indices",
]

DEFAULT_PRUNE = 1e-16
MAX_DEGREE = 170
_KEY_LIMIT = 2**62
_EXACT_OVERFLOW_PAIRS = 4_000_000


class ChaosError(ArithmeticError):
    """Raised when a chaos computation cannot be represented or exceeds its budget."""


@dataclass(frozen=True)
class Caps:
    """Truncation controls.

    ``degree`` defaults to min(n, 12). ``initial_level`` bounds the initial
    value's chaos level and defaults to n. ``max_dropped`` is the tolerated
    dropped mass relative to the terminal norm².
    """

    degree: int | None = None
    prune: float = DEFAULT_PRUNE
    initial_level: int | None = None
    max_dropped: float = 1e-8

    def degree_for(self, grid: GridSpec) -> int:
        return self.degree if self.degree is not None else min(grid.n, 12)

    def initial_for(self, grid: GridSpec) -> int:
        level = self.initial_level if self.initial_level is not None else grid.n
        return min(level, self.degree_for(grid))


# ---------------------------------------------------------------- Hermite


def hermite_eval(k: int, alpha: float, x):
    """h^k_α(x) by the three-term recursion h^{m+1} = x h^m − mα h^{m−1}."""
    if k < 0:
        raise ValueError("degree must be nonnegative")
    x = np.asarray(x, dtype=float)
    h0, h1 = np.ones_like(x), x
    if k == 0:
        return h0 if h0.ndim else float(h0)
    for m in range(1, k):
        h0, h1 = h1, x * h1 - m * alpha * h0
    return h1 if np.ndim(h1) else float(h1)


def hermite_table(x, alpha: float, kmax: int) -> np.ndarray:
    """Stacked h^0..h^kmax at x, shape (kmax+1,) + x.shape."""
    return kernels.hermite_table(np.asarray(x, dtype=float), float(alpha), int(kmax))


@lru_cache(maxsize=None)
def _factorials(limit: int = MAX_DEGREE) -> np.ndarray:
    out = np.ones(limit + 1)
    for k in range(1, limit + 1):
        out[k] = out[k - 1] * k
    return out


# ---------------------------------------------------------------- multi-indices


@lru_cache(maxsize=256)
def total_degree_indices(n: int, m: int) -> np.ndarray:
    """All α ∈ ℕ₀ⁿ with |α| = m, lexicographically ascending, dtype uint8."""
    if n == 1:
        out = np.array([[m]], dtype=np.uint8)
    else:
        blocks = []
        for a in range(m + 1):
            rest = total_degree_indices(n - 1, m - a)
            block = np.empty((rest.shape[0], n), dtype=np.uint8)
            block[:, 0] = a
            block[:, 1:] = rest
            blocks.append(block)
        out = np.concatenate(blocks)
    out.setflags(write=False)
    return out


def _radix(n: int, base: int) -> np.ndarray:
    if base**n >= _KEY_LIMIT:
        raise ChaosError(f"{n} variables with degree cap {base - 1} exceed the key range; lower the cap or the grid")
    return base ** np.arange(n - 1, -1, -1, dtype=np.int64)


def _keys(exps: np.ndarray, base: int) -> np.ndarray:
    radix = _radix(exps.shape[1], base)
    keys = np.zeros(exps.shape[0], dtype=np.int64)
    for i in range(exps.shape[1]):
        keys += exps[:, i].astype(np.int64) * radix[i]
    return keys


def _decode(keys: np.ndarray, n: int, base: int) -> np.ndarray:
    exps = np.empty((keys.size, n), dtype=np.uint8)
    rem = keys.copy()
    for i in range(n - 1, -1, -1):
        exps[:, i] = rem % base
        rem //= base
    return exps


def _monomial_norms(exps: np.ndarray, delta: float) -> np.ndarray:
    """E[M_α²] = Π α_i! Δ^{α_i} per row."""
    fact = _factorials()
    out = np.ones(exps.shape[0])
    for i in range(exps.shape[1]):
        col = exps[:, i]
        if col.any():
            out *= fact[col]
    deg = exps.sum(axis=1, dtype=np.int64)
    return out * delta**deg


# ---------------------------------------------------------------- the type


class ChaosPoly:
    """Sparse finite-chaos random variable. Immutable."""

    __slots__ = ("grid", "exps", "coefs", "degree_cap", "dropped_mass", "_deg")

    def __init__(self, grid: GridSpec, exps: np.ndarray, coefs: np.ndarray, degree_cap: int, dropped_mass: float = 0.0):
        exps = np.asarray(exps, dtype=np.uint8).reshape(-1, grid.n)
        coefs = np.asarray(coefs, dtype=float).reshape(-1)
        exps.setflags(write=False)
        coefs.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "exps", exps)
        object.__setattr__(self, "coefs", coefs)
        object.__setattr__(self, "degree_cap", int(degree_cap))
        object.__setattr__(self, "dropped_mass", float(dropped_mass))
        object.__setattr__(self, "_deg", None)

    def __setattr__(self, name, value):
        raise AttributeError("ChaosPoly is immutable")

    # construction ---------------------------------------------------------

    @classmethod
    def build(
        cls,
        grid: GridSpec,
        exps: np.ndarray,
        coefs: np.ndarray,
        cap: int,
        dropped_mass: float = 0.0,
        prune: float = DEFAULT_PRUNE,
    ) -> "ChaosPoly":
        """Canonicalize raw terms: cap degrees, merge duplicates, prune."""
        if cap > MAX_DEGREE:
            raise ChaosError(f"degree cap above {MAX_DEGREE} is not supported")
        exps = np.asarray(exps).reshape(-1, grid.n)
        if exps.size and (exps.min() < 0 or exps.max() > MAX_DEGREE):
            raise ChaosError("exponent out of range")
        exps = exps.astype(np.uint8)
        coefs = np.asarray(coefs, dtype=float).reshape(-1)
        deg = exps.sum(axis=1, dtype=np.int64)
        over = deg > cap
        if over.any():
            dropped_mass += _merged_mass(exps[over], coefs[over], grid.delta)
            exps, coefs = exps[~over], coefs[~over]
        keys = _keys(exps, cap + 1)
        return cls._from_keys(grid, keys, coefs, cap, dropped_mass, prune)

    @classmethod
    def _from_keys(cls, grid, keys, coefs, cap, dropped_mass, prune) -> "ChaosPoly":
        if keys.size > 1 and not np.all(keys[1:] > keys[:-1]):
            uniq, inv = np.unique(keys, return_inverse=True)
            coefs = np.bincount(inv.reshape(-1), weights=coefs, minlength=uniq.size)
            keys = uniq
        exps = _decode(keys, grid.n, cap + 1)
        keep = coefs != 0.0
        if prune > 0 and keys.size:
            mass = coefs**2 * _monomial_norms(exps, grid.delta)
            total = mass.sum()
            small = keep & (mass < prune * total)
            if small.any():
                dropped_mass += float(mass[small].sum())
                keep &= ~small
        if not keep.all():
            exps, coefs = exps[keep], coefs[keep]
        return cls(grid, exps, coefs, cap, dropped_mass)

    @classmethod
    def zero(cls, grid: GridSpec, cap: int | None = None) -> "ChaosPoly":
        return cls(grid, np.zeros((0, grid.n), np.uint8), np.zeros(0), min(grid.n, 12) if cap is None else cap)

    @classmethod
    def constant(cls, grid: GridSpec, value: float = 1.0, cap: int | None = None) -> "ChaosPoly":
        cap = min(grid.n, 12) if cap is None else cap
        if value == 0:
            return cls.zero(grid, cap)
        return cls(grid, np.zeros((1, grid.n), np.uint8), np.array([float(value)]), cap)

    unit = constant

    @classmethod
    def monomial(cls, grid: GridSpec, alpha: Sequence[int], coef: float = 1.0, cap: int | None = None) -> "ChaosPoly":
        alpha = np.asarray(alpha, dtype=np.int64).reshape(1, grid.n)
        cap = int(max(alpha.sum(), min(grid.n, 12))) if cap is None else cap
        return cls.build(grid, alpha, np.array([coef]), cap, prune=0.0)

    @classmethod
    def linear(cls, grid: GridSpec, weights: Sequence[float], cap: int | None = None) -> "ChaosPoly":
        """Σ_i w_i Δ_i W."""
        w = np.asarray(weights, dtype=float)
        if w.shape != (grid.n,):
            raise ValueError(f"expected {grid.n} weights")
        cap = min(grid.n, 12) if cap is None else cap
        return cls.build(grid, np.eye(grid.n, dtype=np.uint8), w, max(cap, 1), prune=0.0)

    @classmethod
    def from_dict(cls, grid: GridSpec, terms: Mapping[Sequence[int], float], cap: int | None = None) -> "ChaosPoly":
        if not terms:
            return cls.zero(grid, cap)
        exps = np.array([list(k) for k in terms], dtype=np.int64).reshape(-1, grid.n)
        coefs = np.array(list(terms.values()), dtype=float)
        cap = int(max(exps.sum(axis=1).max(), 1)) if cap is None else cap
        return cls.build(grid, exps, coefs, cap, prune=0.0)

    # inspection -----------------------------------------------------------

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def degrees(self) -> np.ndarray:
        if self._deg is None:
            object.__setattr__(self, "_deg", self.exps.sum(axis=1, dtype=np.int64))
        return self._deg

    @property
    def max_degree(self) -> int:
        return int(self.degrees.max()) if len(self) else 0

    def __len__(self) -> int:
        return self.coefs.size

    def to_dict(self) -> dict[tuple[int, ...], float]:
        return {tuple(int(a) for a in row): float(c) for row, c in zip(self.exps, self.coefs)}

    def coefficient(self, alpha: Sequence[int]) -> float:
        return self.to_dict().get(tuple(alpha), 0.0)

    def to_text(self) -> str:
        """Sorted listing with one ``α : coefficient`` line per term."""
        lines = [f"{','.join(str(int(a)) for a in row)} : {float(c)!r}" for row, c in zip(self.exps, self.coefs)]
        return "\n".join(lines) + ("\n" if lines else "")

    def __repr__(self) -> str:
        return f"ChaosPoly(n={self.n}, terms={len(self)}, cap={self.degree_cap}, dropped={self.dropped_mass:.3g})"

    # linear algebra -------------------------------------------------------

    def _combine(self, other: "ChaosPoly", sign: float) -> "ChaosPoly":
        _same_grid(self, other)
        cap = max(self.degree_cap, other.degree_cap)
        keys = np.concatenate([_keys(self.exps, cap + 1), _keys(other.exps, cap + 1)])
        coefs = np.concatenate([self.coefs, sign * other.coefs])
        return ChaosPoly._from_keys(
            self.grid, keys, coefs, cap, self.dropped_mass + other.dropped_mass, 0.0
        )

    def __add__(self, other: "ChaosPoly") -> "ChaosPoly":
        if not isinstance(other, ChaosPoly):
            return self + ChaosPoly.constant(self.grid, float(other), self.degree_cap)
        return self._combine(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other: "ChaosPoly") -> "ChaosPoly":
        if not isinstance(other, ChaosPoly):
            return self + (-float(other))
        return self._combine(other, -1.0)

    def __neg__(self) -> "ChaosPoly":
        return self.scale(-1.0)

    def scale(self, c: float) -> "ChaosPoly":
        if c == 0:
            return ChaosPoly.zero(self.grid, self.degree_cap)
        return ChaosPoly(self.grid, self.exps, self.coefs * c, self.degree_cap, self.dropped_mass * c * c)

    def __mul__(self, c):
        if isinstance(c, ChaosPoly):
            raise TypeError("use wick_mul or ordinary_mul for products of chaos polynomials")
        return self.scale(float(c))

    __rmul__ = __mul__

    def with_cap(self, cap: int, prune: float = 0.0) -> "ChaosPoly":
        return ChaosPoly.build(self.grid, self.exps, self.coefs, cap, self.dropped_mass, prune)


def _same_grid(a: ChaosPoly, b: ChaosPoly) -> None:
    if a.grid != b.grid:
        raise ValueError(f"grid mismatch: n={a.grid.n} vs n={b.grid.n}")


def _merged_mass(exps: np.ndarray, coefs: np.ndarray, delta: float) -> float:
    """L² mass of Σ coefs·M_exps after merging duplicate rows."""
    if exps.shape[0] == 0:
        return 0.0
    base = int(exps.max()) + 1
    if base ** exps.shape[1] < _KEY_LIMIT:
        uniq_keys, inv = np.unique(_keys(exps, base), return_inverse=True)
        uniq = _decode(uniq_keys, exps.shape[1], base)
    else:
        uniq, inv = np.unique(exps, axis=0, return_inverse=True)
    summed = np.bincount(inv.reshape(-1), weights=coefs)
    return float(np.sum(summed**2 * _monomial_norms(uniq, delta)))


def _level_masses(p: ChaosPoly) -> np.ndarray:
    mass = p.coefs**2 * _monomial_norms(p.exps, p.grid.delta)
    return np.bincount(p.degrees, weights=mass, minlength=p.max_degree + 1) if len(p) else np.zeros(1)


def _overflow_bound(a: ChaosPoly, b: ChaosPoly, cap: int) -> float:
    """Upper bound of the mass of levels > cap in a◇b.

    Uses ‖X◇Y‖² ≤ C(i+j, i)‖X‖²‖Y‖² for X, Y in chaos levels i and j.
    """
    ma, mb = np.sqrt(_level_masses(a)), np.sqrt(_level_masses(b))
    total = 0.0
    for k in range(cap + 1, ma.size + mb.size - 1):
        acc = 0.0
        for i in range(max(0, k - mb.size + 1), min(k, ma.size - 1) + 1):
            acc += math.sqrt(math.comb(k, i)) * ma[i] * mb[k - i]
        total += acc * acc
    return total


# ---------------------------------------------------------------- products


def _wick_raw(a: ChaosPoly, b: ChaosPoly, cap: int, exact_overflow: bool = True):
    """Unmerged keys/coefs of a◇b up to degree cap, plus the dropped mass."""
    base = cap + 1
    da, db = a.degrees, b.degrees
    ka = da <= cap
    kb = db <= cap
    a_exps, a_coefs, da = a.exps[ka], a.coefs[ka], da[ka]
    order = np.argsort(db[kb], kind="stable")
    b_exps, b_coefs, db = b.exps[kb][order], b.coefs[kb][order], db[kb][order]
    ia, ib = kernels.degree_pairs(da, db, cap, False)
    keys = _keys(a_exps, base)[ia] + _keys(b_exps, base)[ib]
    coefs = a_coefs[ia] * b_coefs[ib]
    # mass of the product levels above the cap
    dropped = 0.0
    n_over = int(np.sum(b_exps.shape[0] - np.searchsorted(db, cap - da, side="right")))
    n_over += int((~ka).sum()) * len(b) + int((~kb).sum()) * len(a)
    if n_over:
        if exact_overflow and n_over <= _EXACT_OVERFLOW_PAIRS:
            ja, jb = kernels.degree_pairs(a.degrees, np.sort(b.degrees, kind="stable"), cap, True)
            border = np.argsort(b.degrees, kind="stable")
            over_exps = a.exps[ja].astype(np.int64) + b.exps[border][jb].astype(np.int64)
            dropped = _merged_mass(over_exps, a.coefs[ja] * b.coefs[border][jb], a.grid.delta)
        else:
            dropped = _overflow_bound(a, b, cap)
    return keys, coefs, dropped


def wick_mul(a: ChaosPoly, b: ChaosPoly, cap: int | None = None, prune: float = DEFAULT_PRUNE) -> ChaosPoly:
    """Wick product: exponents add; levels above ``cap`` go to dropped_mass."""
    _same_grid(a, b)
    cap = max(a.degree_cap, b.degree_cap) if cap is None else int(cap)
    if len(a) == 0 or len(b) == 0:
        return ChaosPoly.zero(a.grid, cap)
    keys, coefs, dropped = _wick_raw(a, b, cap)
    return ChaosPoly._from_keys(a.grid, keys, coefs, cap, a.dropped_mass + b.dropped_mass + dropped, prune)


def partial(p: ChaosPoly, r: Sequence[int]) -> ChaosPoly:
    """Hermite derivative ∂^r: M_α ↦ Π α_i!/(α_i−r_i)! M_{α−r} (zero when r ≰ α)."""
    r = np.asarray(r, dtype=np.int64).reshape(1, p.n)
    ok = np.all(p.exps >= r, axis=1)
    exps = p.exps[ok].astype(np.int64) - r
    fact = _factorials()
    factor = np.ones(exps.shape[0])
    for i in np.nonzero(r[0])[0]:
        factor *= fact[exps[:, i] + r[0, i]] / fact[exps[:, i]]
    return ChaosPoly(p.grid, exps.astype(np.uint8), p.coefs[ok] * factor, p.degree_cap, 0.0)


def ordinary_mul(a: ChaosPoly, b: ChaosPoly, cap: int | None = None, prune: float = DEFAULT_PRUNE) -> ChaosPoly:
    """Pointwise product, via A·B = Σ_r Δ^{|r|}/r! (∂^r A) ◇ (∂^r B).

    Per variable this is the linearization
    h^a h^b = Σ_r C(a,r) C(b,r) r! Δ^r h^{a+b−2r}. Only variables used by both
    operands contribute contractions, so disjoint supports reduce to one Wick
    product.
    """
    _same_grid(a, b)
    cap = max(a.degree_cap, b.degree_cap) if cap is None else int(cap)
    if len(a) == 0 or len(b) == 0:
        return ChaosPoly.zero(a.grid, cap)
    maxa = a.exps.max(axis=0).astype(np.int64)
    maxb = b.exps.max(axis=0).astype(np.int64)
    limit = np.minimum(maxa, maxb)
    common = np.nonzero(limit)[0]
    rmax = min(a.max_degree, b.max_degree)
    delta = a.grid.delta
    fact = _factorials()
    all_keys, all_coefs = [], []
    over_exps, over_coefs = [], []
    for rr in iproduct(*(range(int(limit[i]) + 1) for i in common)):
        if sum(rr) > rmax:
            continue
        r = np.zeros(a.n, dtype=np.int64)
        r[common] = rr
        weight = delta ** int(r.sum()) / float(np.prod(fact[r]))
        pa, pb = partial(a, r), partial(b, r)
        if len(pa) == 0 or len(pb) == 0:
            continue
        pa = pa.scale(weight)
        keys, coefs, _ = _wick_raw(pa, pb, cap, exact_overflow=False)
        all_keys.append(keys)
        all_coefs.append(coefs)
        ja, jb = kernels.degree_pairs(pa.degrees, np.sort(pb.degrees, kind="stable"), cap, True)
        if ja.size:
            border = np.argsort(pb.degrees, kind="stable")
            over_exps.append(pa.exps[ja].astype(np.int64) + pb.exps[border][jb].astype(np.int64))
            over_coefs.append(pa.coefs[ja] * pb.coefs[border][jb])
    dropped = a.dropped_mass + b.dropped_mass
    if over_exps:
        dropped += _merged_mass(np.concatenate(over_exps), np.concatenate(over_coefs), delta)
    if not all_keys:
        return ChaosPoly(a.grid, np.zeros((0, a.n), np.uint8), np.zeros(0), cap, dropped)
    return ChaosPoly._from_keys(a.grid, np.concatenate(all_keys), np.concatenate(all_coefs), cap, dropped, prune)


def wick_power_linear(
    weights: Sequence[float], grid: GridSpec, m: int, method: str = "multinomial", cap: int | None = None
) -> ChaosPoly:
    """(Σ w_i Δ_i W)^{◇m}.

    ``multinomial`` writes the coefficients m!/α! w^α directly. ``recursion``
    applies ℓ^{◇(k+1)} = ℓ·ℓ^{◇k} − k‖ℓ‖² ℓ^{◇(k−1)} with ordinary products.
    """
    w = np.asarray(weights, dtype=float)
    cap = max(m, min(grid.n, 12)) if cap is None else cap
    if method == "multinomial":
        exps, coefs = _power_terms(w, m)
        return ChaosPoly.build(grid, exps, coefs, cap, prune=0.0)
    if method != "recursion":
        raise ValueError(f"unknown method {method!r}")
    lin = ChaosPoly.linear(grid, w, cap)
    var = grid.delta * float(np.dot(w, w))
    prev, cur = ChaosPoly.constant(grid, 1.0, cap), lin
    if m == 0:
        return prev
    for k in range(1, m):
        prev, cur = cur, ordinary_mul(lin, cur, cap, prune=0.0) - prev.scale(k * var)
    return cur


def _power_terms(w: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Multi-indices of degree m over the support of w and their coefficients."""
    n = w.size
    support = np.nonzero(w)[0]
    if m == 0:
        return np.zeros((1, n), np.uint8), np.ones(1)
    if support.size == 0:
        return np.zeros((0, n), np.uint8), np.zeros(0)
    sub = total_degree_indices(int(support.size), m)
    exps = np.zeros((sub.shape[0], n), dtype=np.uint8)
    exps[:, support] = sub
    fact = _factorials()
    coefs = np.full(sub.shape[0], fact[m])
    for j, i in enumerate(support):
        col = sub[:, j]
        coefs *= w[i] ** col.astype(float) / fact[col]
    return exps, coefs


def wick_exp(a: ChaosPoly, cap: int | None = None, prune: float = DEFAULT_PRUNE) -> ChaosPoly:
    """Σ_{m≤cap} a^{◇m}/m!."""
    cap = a.degree_cap if cap is None else int(cap)
    mean = expectation(a)
    if mean != 0.0:
        warnings.warn("wick_exp of a non-centered argument; the series still converges but is not normalized", stacklevel=2)
    total = ChaosPoly.constant(a.grid, 1.0, cap)
    power = total
    for m in range(1, cap + 1):
        power = wick_mul(power, a, cap, prune=0.0).scale(1.0 / m)
        if len(power) == 0:
            break
        total = total + power
    return total.with_cap(cap, prune)


# ---------------------------------------------------------------- functionals


def _prefix_plan(exps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    t, n = exps.shape
    nz = exps != 0
    last = np.where(nz.any(axis=1), n - 1 - np.argmax(nz[:, ::-1], axis=1), -1)
    end = (last + 1).astype(np.int64)
    start = np.zeros(t, dtype=np.int64)
    if t > 1:
        diff = exps[1:] != exps[:-1]
        first = np.argmax(diff, axis=1)
        start[1:] = np.minimum(first, end[:-1])
    return start, end


def eval_at(p: ChaosPoly, increments) -> np.ndarray | float:
    """Pathwise value at one increment vector (n,) or a batch (N, n)."""
    w = np.asarray(increments, dtype=float)
    single = w.ndim == 1
    w2 = w.reshape(1, -1) if single else w
    if w2.shape[1] != p.n:
        raise ValueError(f"expected {p.n} increments per sample, got {w2.shape[1]}")
    if len(p) == 0:
        out = np.zeros(w2.shape[0])
    else:
        start, end = _prefix_plan(p.exps)
        exps = np.ascontiguousarray(p.exps)
        out = kernels.eval_batch(exps, np.ascontiguousarray(p.coefs), start, end, w2, p.grid.delta, int(p.exps.max()))
    out = np.asarray(out)
    return float(out[0]) if single else out


def expectation(p: ChaosPoly) -> float:
    if len(p) and not p.exps[0].any():
        return float(p.coefs[0])
    return 0.0


def inner_product(a: ChaosPoly, b: ChaosPoly) -> float:
    """E[A·B] = Σ_α a_α b_α Π α_i! Δ^{α_i}."""
    _same_grid(a, b)
    base = max(a.degree_cap, b.degree_cap, a.max_degree, b.max_degree) + 1
    _, ia, ib = np.intersect1d(_keys(a.exps, base), _keys(b.exps, base), assume_unique=True, return_indices=True)
    if ia.size == 0:
        return 0.0
    return float(np.sum(a.coefs[ia] * b.coefs[ib] * _monomial_norms(a.exps[ia], a.grid.delta)))


def norm2(p: ChaosPoly) -> float:
    return float(np.sum(p.coefs**2 * _monomial_norms(p.exps, p.grid.delta)))


def project_level(p: ChaosPoly, k: int) -> ChaosPoly:
    keep = p.degrees == k
    return ChaosPoly(p.grid, p.exps[keep], p.coefs[keep], p.degree_cap, 0.0)


def gamma(p: ChaosPoly, r: float) -> ChaosPoly:
    """Mehler operator: level k scaled by r^k."""
    return ChaosPoly(p.grid, p.exps, p.coefs * float(r) ** p.degrees, p.degree_cap, p.dropped_mass)


def monomial_products(exps: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Π_i table[i, α_i, ...] per row of exps; table shape (n, dmax+1, *tail)."""
    out = np.ones((exps.shape[0],) + table.shape[2:], dtype=table.dtype)
    for i in range(exps.shape[1]):
        col = exps[:, i]
        if col.any():
            out *= table[i, col]
    return out


def s_transform(p: ChaosPoly, g_cell_integrals: Sequence[float]) -> float:
    """(S p)(g) = Σ_α a_α Π_i G_i^{α_i} with G_i = ∫_{cell i} g."""
    g = np.asarray(g_cell_integrals, dtype=float)
    if g.shape != (p.n,):
        raise ValueError(f"expected {p.n} cell integrals")
    if len(p) == 0:
        return 0.0
    dmax = int(p.exps.max())
    table = g[:, None] ** np.arange(dmax + 1)[None, :]
    return float(np.dot(p.coefs, monomial_products(p.exps, table)))
