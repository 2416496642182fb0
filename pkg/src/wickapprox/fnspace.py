"""Deterministic L²([0,1]) layer: functions, inner products, grid projections.

Integrals use composite Gauss–Legendre with 16 nodes per piece. A piece is
split in half until the two-level estimates agree to ``rtol``. Pieces never
straddle a declared breakpoint, so step functions integrate exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from . import exprlang

__all__ = [
    "Func1D",
    "GridSpec",
    "StepFunc",
    "QuadSpec",
    "QuadratureError",
    "inner",
    "norm2",
    "integrate",
    "cell_integrals",
    "cell_average",
    "project",
    "residual_gram",
    "strong_weights",
    "strong_gram",
    "tv_and_sup",
    "bridge_integral",
    "indicator",
]


class QuadratureError(ArithmeticError):
    """Adaptive quadrature failed to converge."""


@dataclass(frozen=True)
class QuadSpec:
    nodes: int = 16
    rtol: float = 1e-12
    max_depth: int = 30
    atol: float = 1e-17  # per unit width; below this two rules count as agreeing


DEFAULT_QUAD = QuadSpec()


@lru_cache(maxsize=None)
def _gl(nodes: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(nodes)
    return (x + 1.0) / 2.0, w / 2.0


@dataclass(frozen=True)
class GridSpec:
    """Equidistant grid with cells [k/n, (k+1)/n)."""

    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"grid size must be a positive integer, got {self.n!r}")

    @property
    def delta(self) -> float:
        return 1.0 / self.n

    @property
    def edges(self) -> np.ndarray:
        return np.arange(self.n + 1) / self.n

    @property
    def left_points(self) -> np.ndarray:
        return np.arange(self.n) / self.n


@dataclass(frozen=True, eq=False)
class Func1D:
    """Real function on [0,1] with a derivative.

    ``value`` and ``derivative`` must accept numpy arrays. ``breakpoints`` lists
    interior points where the function or its derivative may jump; integration
    never places a piece across one of them.
    """

    value: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray] | None = None
    breakpoints: tuple[float, ...] = ()
    name: str = "f"
    antiderivative: Callable[[np.ndarray], np.ndarray] | None = None

    def __call__(self, s):
        out = np.broadcast_to(np.asarray(self.value(np.asarray(s, dtype=float)), dtype=float), np.shape(s))
        return float(out) if np.ndim(s) == 0 else out.copy()

    def prime(self) -> "Func1D":
        if self.derivative is None:
            raise ValueError(f"{self.name} has no derivative")
        return Func1D(self.derivative, None, self.breakpoints, f"{self.name}'")

    @classmethod
    def from_expr(cls, text: str, name: str | None = None) -> "Func1D":
        tree = exprlang.parse(text)
        dtree = exprlang.differentiate(tree)
        ddtree = exprlang.differentiate(dtree)

        def value(s, _t=tree):
            return exprlang.evaluate(_t, s)

        def deriv(s, _t=dtree):
            return exprlang.evaluate(_t, s)

        func = cls(value, deriv, (), name or text)
        object.__setattr__(func, "expr", tree)
        object.__setattr__(func, "second", lambda s, _t=ddtree: exprlang.evaluate(_t, s))
        return func

    @classmethod
    def constant(cls, c: float, name: str | None = None) -> "Func1D":
        return cls(lambda s: np.full(np.shape(s), float(c)), lambda s: np.zeros(np.shape(s)), (), name or repr(c))

    def __add__(self, other: "Func1D") -> "Func1D":
        return _combine(self, other, 1.0)

    def __sub__(self, other: "Func1D") -> "Func1D":
        return _combine(self, other, -1.0)

    def scaled(self, c: float) -> "Func1D":
        d = self.derivative
        return Func1D(
            lambda s: c * self.value(s),
            None if d is None else (lambda s: c * d(s)),
            self.breakpoints,
            f"{c}*{self.name}",
        )

    def times(self, other: "Func1D") -> "Func1D":
        return Func1D(
            lambda s: self.value(s) * other.value(s),
            None,
            tuple(sorted(set(self.breakpoints) | set(other.breakpoints))),
            f"{self.name}*{other.name}",
        )


def _combine(a: Func1D, b: Func1D, sign: float) -> Func1D:
    da, db = a.derivative, b.derivative
    deriv = None if da is None or db is None else (lambda s: da(s) + sign * db(s))
    return Func1D(
        lambda s: a.value(s) + sign * b.value(s),
        deriv,
        tuple(sorted(set(a.breakpoints) | set(b.breakpoints))),
        f"({a.name}{'+' if sign > 0 else '-'}{b.name})",
    )


class StepFunc(Func1D):
    """Function constant on each cell of a grid."""

    def __init__(self, grid: GridSpec, values: Sequence[float], name: str = "step"):
        vals = np.array(values, dtype=float)
        if vals.shape != (grid.n,):
            raise ValueError(f"expected {grid.n} cell values, got shape {vals.shape}")
        vals.setflags(write=False)

        def value(s, _v=vals, _n=grid.n):
            idx = np.clip(np.floor(np.asarray(s) * _n).astype(int), 0, _n - 1)
            return _v[idx]

        super().__init__(value, lambda s: np.zeros(np.shape(s)), tuple(grid.edges[1:-1]), name)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", vals)


def indicator(r: float, c: float = 1.0) -> Func1D:
    """c·1_{[0,r)} with a declared breakpoint at r."""
    bps = (float(r),) if 0.0 < r < 1.0 else ()
    return Func1D(
        lambda s: np.where(np.asarray(s) < r, c, 0.0),
        lambda s: np.zeros(np.shape(s)),
        bps,
        f"{c}*1[0,{r})",
    )


# ---------------------------------------------------------------- quadrature


def _piece_rule(fn, lo: np.ndarray, hi: np.ndarray, nodes: int) -> np.ndarray:
    x, w = _gl(nodes)
    width = hi - lo
    pts = lo[:, None] + width[:, None] * x[None, :]
    vals = np.asarray(fn(pts), dtype=float)
    if vals.shape != pts.shape:
        vals = np.broadcast_to(vals, pts.shape)
    return (vals @ w) * width


def _integrate_pieces(fn, lo, hi, quad: QuadSpec, coarse=None, depth: int = 0) -> np.ndarray:
    """Adaptive per-piece integral of ``fn`` over [lo_j, hi_j]."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if coarse is None:
        coarse = _piece_rule(fn, lo, hi, quad.nodes)
    mid = 0.5 * (lo + hi)
    left = _piece_rule(fn, lo, mid, quad.nodes)
    right = _piece_rule(fn, mid, hi, quad.nodes)
    fine = left + right
    scale = np.maximum(np.abs(fine), np.abs(left) + np.abs(right))
    bad = np.abs(fine - coarse) > quad.rtol * scale + quad.atol * (hi - lo) + 1e-300
    if bad.any():
        if depth >= quad.max_depth:
            raise QuadratureError("composite Gauss-Legendre did not converge")
        k = int(bad.sum())
        sub = _integrate_pieces(
            fn,
            np.concatenate([lo[bad], mid[bad]]),
            np.concatenate([mid[bad], hi[bad]]),
            quad,
            np.concatenate([left[bad], right[bad]]),
            depth + 1,
        )
        fine[bad] = sub[:k] + sub[k:]
    return fine


def _partition(breakpoints: Sequence[float], base: np.ndarray) -> np.ndarray:
    pts = np.union1d(base, [b for b in breakpoints if 0.0 < b < 1.0])
    return pts


def integrate(fn: Callable, breakpoints: Sequence[float] = (), quad: QuadSpec = DEFAULT_QUAD) -> float:
    """∫_0^1 fn(s) ds."""
    edges = _partition(breakpoints, np.array([0.0, 1.0]))
    return float(np.sum(_integrate_pieces(fn, edges[:-1], edges[1:], quad)))


def inner(f: Func1D, g: Func1D, quad: QuadSpec = DEFAULT_QUAD) -> float:
    """⟨f, g⟩ on L²([0,1])."""
    if isinstance(f, StepFunc) and isinstance(g, StepFunc) and f.grid == g.grid:
        return float(np.dot(f.values, g.values) * f.grid.delta)
    bps = tuple(set(f.breakpoints) | set(g.breakpoints))
    return integrate(lambda s: f.value(s) * g.value(s), bps, quad)


def norm2(f: Func1D, quad: QuadSpec = DEFAULT_QUAD) -> float:
    return inner(f, f, quad)


def cell_integrals(f: Func1D, grid: GridSpec, quad: QuadSpec = DEFAULT_QUAD) -> np.ndarray:
    """Vector of ∫_{cell k} f."""
    if isinstance(f, StepFunc) and f.grid == grid:
        return f.values * grid.delta
    if f.antiderivative is not None:
        prim = f.antiderivative(grid.edges)
        return np.diff(prim)
    edges = _partition(f.breakpoints, grid.edges)
    pieces = _integrate_pieces(f.value, edges[:-1], edges[1:], quad)
    owner = np.minimum(np.floor(edges[:-1] * grid.n + 1e-9).astype(int), grid.n - 1)
    out = np.zeros(grid.n)
    np.add.at(out, owner, pieces)
    return out


def cell_average(f: Func1D, k: int, grid: GridSpec, quad: QuadSpec = DEFAULT_QUAD) -> float:
    if not 0 <= k < grid.n:
        raise IndexError(f"cell {k} outside grid of size {grid.n}")
    return float(cell_integrals(f, grid, quad)[k] * grid.n)


def project(f: Func1D, grid: GridSpec, quad: QuadSpec = DEFAULT_QUAD) -> StepFunc:
    """Orthogonal projection onto functions constant on the grid cells."""
    return StepFunc(grid, cell_integrals(f, grid, quad) * grid.n, name=f"P{grid.n}[{f.name}]")


def residual_gram(f: Func1D, g: Func1D, grid: GridSpec, quad: QuadSpec = DEFAULT_QUAD) -> float:
    """⟨f,g⟩ − ⟨P_n f, P_n g⟩, integrated cell by cell to avoid cancellation."""
    pf = project(f, grid, quad)
    pg = project(g, grid, quad)
    bps = tuple(set(f.breakpoints) | set(g.breakpoints))
    edges = _partition(bps, grid.edges)

    def integrand(s):
        return (f.value(s) - pf.value(s)) * (g.value(s) - pg.value(s))

    # pieces never straddle a grid point, so the projections are constant on each piece
    return float(np.sum(_integrate_pieces(integrand, edges[:-1], edges[1:], quad)))


def strong_weights(f: Func1D, grid: GridSpec) -> tuple[np.ndarray, float]:
    """Weights f(k/n) + f'(k/n)Δ/2 and the discrete variance Δ·Σ weight²."""
    if f.derivative is None:
        raise ValueError(f"{f.name} has no derivative; strong weights need one")
    s = grid.left_points
    w = np.asarray(f.value(s), dtype=float) + np.asarray(f.derivative(s), dtype=float) * grid.delta / 2
    w = np.broadcast_to(w, (grid.n,)).copy()
    return w, float(grid.delta * np.dot(w, w))


def strong_gram(f: Func1D, g: Func1D, grid: GridSpec, quad: QuadSpec = DEFAULT_QUAD) -> float:
    """E[(I(f) − I^n(f))(I(g) − I^n(g))] for the strong weights I^n."""
    wf, _ = strong_weights(f, grid)
    wg, _ = strong_weights(g, grid)
    cross = np.dot(wf, cell_integrals(g, grid, quad)) + np.dot(wg, cell_integrals(f, grid, quad))
    return inner(f, g, quad) - cross + grid.delta * np.dot(wf, wg)


def tv_and_sup(f: Func1D, m: int = 4096) -> tuple[float, float]:
    """Total variation and sup norm sampled on m+1 equispaced points."""
    if m < 1000:
        raise ValueError("resolution must be at least 1000 points")
    vals = np.asarray(f.value(np.linspace(0.0, 1.0, m + 1)), dtype=float)
    vals = np.broadcast_to(vals, (m + 1,))
    return float(np.sum(np.abs(np.diff(vals)))), float(np.max(np.abs(vals)))


def bridge_integral(grid: GridSpec, i: int, j: int) -> float:
    """∫_{cell i}∫_{cell j} Cov(B_s, B_t) ds dt for the piecewise Brownian bridge.

    On a cell of width Δ with local coordinates u, v the bridge covariance is
    Δ(min(u,v) − uv); bridges on different cells are independent. The inner
    integral is split at the kink u = v so Gauss–Legendre is exact.
    """
    if not (0 <= i < grid.n and 0 <= j < grid.n):
        raise IndexError("cell index outside grid")
    if i != j:
        return 0.0
    x, w = _gl(4)
    d = grid.delta
    total = 0.0
    for u, wu in zip(x, w):
        # v in [0, u]: min = v ; v in [u, 1]: min = u
        v1 = u * x
        v2 = u + (1 - u) * x
        inner_int = u * np.dot(w, v1 - u * v1) + (1 - u) * np.dot(w, u - u * v2)
        total += wu * inner_int
    return float(d**3 * total)
