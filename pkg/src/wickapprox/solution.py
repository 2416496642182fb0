"""Exact and optimal terminal values of the linear Skorohod SDE.

    dX_t = a(t) X_t dt + σ(t) X_t ◇ dW_t,  X_0 = F(I(f)),

has X_1 = e^{∫a} F(I(f)) ◇ e^{◇I(σ)}. Pathwise this is evaluated through the
translation identity

    F(I(f)) ◇ e^{◇I(σ)} = e^{I(σ) − ‖σ‖²/2} · Σ c_m h^m_{‖f‖²}(I(f) − ⟨f,σ⟩),

and conditioning on the grid increments replaces f, σ by their cell
averages. All deterministic second moments go through
:func:`tilted_moment`:

    E[(A ◇ e^{◇I(u)})(B ◇ e^{◇I(v)})] = e^{⟨u,v⟩} E[A(Z₁ + ⟨f,v⟩) B(Z₂ + ⟨g,u⟩)]

with (Z₁, Z₂) centered Gaussian with the Gram of (f, g).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .chaos import ChaosError, ChaosPoly, monomial_products
from .fnspace import (
    DEFAULT_QUAD,
    Func1D,
    GridSpec,
    QuadratureError,
    QuadSpec,
    cell_integrals,
    inner,
    integrate,
    residual_gram,
)
from .functional import LinWA, WickSeries, derivative, from_scalar, linwa_moment
from .lawsim import JointSampler, MCResult, PathSample, mc_mean

__all__ = [
    "SdeProblem",
    "Projected",
    "exact_terminal",
    "optimal_terminal",
    "tilted_moment",
    "moment_oracle",
    "second_moment",
    "optimal_constant",
    "closed_form_constant",
    "mse_optimal",
    "mse_closed_form",
    "s_transform_solution",
    "cross_moment",
    "wick_exp_problem",
    "exp_problem",
]

DEFAULT_SERIES_DEGREE = 40


@dataclass(frozen=True)
class Projected:
    """Grid data: cell averages and Grams of the projected functions."""

    grid: GridSpec
    avg_args: np.ndarray  # (K, n)
    avg_sigma: np.ndarray  # (n,)
    gram_args: np.ndarray  # ⟨P f_k, P f_l⟩
    args_sigma: np.ndarray  # ⟨P f_k, P σ⟩
    sigma2: float  # ‖P σ‖²


@dataclass(frozen=True, eq=False)
class SdeProblem:
    """Coefficients a, σ and initial value F(I(f)) on [0, 1].

    ``F`` is a :class:`WickSeries` in I(f) or a :class:`LinWA` over its own
    argument functions (then ``f`` is ignored and may be None).
    """

    a: Func1D
    sigma: Func1D
    f: Func1D | None
    F: WickSeries | LinWA
    quad: QuadSpec = DEFAULT_QUAD
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_strings(
        cls,
        a: str,
        sigma: str,
        f: str,
        functional: str | Callable = "wick_exp",
        params: Sequence[float] | None = None,
        degree: int = DEFAULT_SERIES_DEGREE,
        quad: QuadSpec = DEFAULT_QUAD,
    ) -> "SdeProblem":
        fa, fs, ff = Func1D.from_expr(a), Func1D.from_expr(sigma), Func1D.from_expr(f)
        v = inner(ff, ff, quad)
        if v == 0 and not (isinstance(functional, str)):
            series = from_scalar("polynomial", 0.0, 0, [float(functional(0.0))])
        else:
            series = from_scalar(functional, v, degree, params)
        return cls(fa, fs, ff, series, quad)

    # scalar data ------------------------------------------------------------

    @property
    def multivariate(self) -> bool:
        return isinstance(self.F, LinWA)

    @property
    def args(self) -> tuple[Func1D, ...]:
        return self.F.args if self.multivariate else (self.f,)

    @cached_property
    def int_a(self) -> float:
        return integrate(self.a.value, self.a.breakpoints, self.quad)

    @cached_property
    def growth(self) -> float:
        return math.exp(self.int_a)

    @cached_property
    def sigma2(self) -> float:
        return inner(self.sigma, self.sigma, self.quad)

    @cached_property
    def gram_args(self) -> np.ndarray:
        K = len(self.args)
        G = np.empty((K, K))
        for i in range(K):
            for j in range(i, K):
                G[i, j] = G[j, i] = inner(self.args[i], self.args[j], self.quad)
        return G

    @cached_property
    def args_sigma(self) -> np.ndarray:
        return np.array([inner(g, self.sigma, self.quad) for g in self.args])

    @property
    def f2(self) -> float:
        return float(self.gram_args[0, 0])

    @property
    def f_sigma(self) -> float:
        return float(self.args_sigma[0])

    @property
    def series(self) -> WickSeries:
        """The univariate series read at variance ‖f‖²."""
        if self.multivariate:
            raise TypeError("multivariate problem has no single series")
        return self.F.with_variance(self.f2)

    def projected(self, grid: GridSpec) -> Projected:
        key = ("proj", grid.n)
        if key not in self._cache:
            d = grid.delta
            avg = np.array([cell_integrals(g, grid, self.quad) / d for g in self.args])
            avg_s = cell_integrals(self.sigma, grid, self.quad) / d
            self._cache[key] = Projected(grid, avg, avg_s, d * avg @ avg.T, d * avg @ avg_s, d * float(avg_s @ avg_s))
        return self._cache[key]


# ---------------------------------------------------------------- pathwise values


def _translated(problem: SdeProblem, values, sigma_value, gram, shift, sigma2):
    tilt = np.exp(np.asarray(sigma_value, dtype=float) - sigma2 / 2)
    if problem.multivariate:
        vals = np.asarray(values, dtype=float)
        shifted = vals - np.asarray(shift).reshape((-1,) + (1,) * (vals.ndim - 1))
        body = problem.F.evaluate(shifted, gram)
    else:
        body = problem.F.with_variance(float(gram[0, 0])).evaluate(np.asarray(values, dtype=float) - float(shift[0]))
    out = problem.growth * tilt * body
    return out if np.ndim(out) else float(out)


def exact_terminal(problem: SdeProblem, I_f, I_sigma):
    """X_1 at a joint sample of I(f) (or the K argument integrals, axis 0) and I(σ)."""
    return _translated(problem, I_f, I_sigma, problem.gram_args, problem.args_sigma, problem.sigma2)


def optimal_terminal(problem: SdeProblem, grid: GridSpec, sample: PathSample | np.ndarray):
    """E[X_1 | grid increments] evaluated at the sample's increments."""
    inc = sample.increments if isinstance(sample, PathSample) else np.asarray(sample, dtype=float)
    p = problem.projected(grid)
    hat_args = p.avg_args @ inc.T  # (K,) or (K, N)
    hat_sigma = inc @ p.avg_sigma
    values = hat_args if problem.multivariate else hat_args[0]
    return _translated(problem, values, hat_sigma, p.gram_args, p.args_sigma, p.sigma2)


# ---------------------------------------------------------------- moments


def _gh(n: int):
    x, w = np.polynomial.hermite_e.hermegauss(n)
    return x, w / math.sqrt(2 * math.pi)


def tilted_moment(
    A: WickSeries,
    B: WickSeries,
    ff: float,
    gg: float,
    fg: float,
    fv: float = 0.0,
    gu: float = 0.0,
    uv: float = 0.0,
    rtol: float = 1e-10,
    max_nodes: int = 1024,
) -> float:
    """E[(A(I(f))◇e^{◇I(u)})·(B(I(g))◇e^{◇I(v)})] from Gram data.

    Tensor Gauss–Hermite in the eigenbasis of the (f, g) Gram; the node
    count doubles until successive values agree to ``rtol`` relative to
    E|A·B| on the same rule.
    """
    C = np.array([[ff, fg], [fg, gg]], dtype=float)
    lam, Q = np.linalg.eigh(C)
    scale = max(1.0, float(np.max(np.abs(lam))))
    if lam.min() < -1e-12 * scale:
        raise ValueError(f"Gram of (f, g) is not positive semidefinite (eigenvalue {lam.min():.3e})")
    L = Q * np.sqrt(np.clip(lam, 0.0, None))
    Ae, Be = A.with_variance(ff), B.with_variance(gg)
    prev = None
    n = 16
    while n <= max_nodes:
        x, w = _gh(n)
        X1, X2 = np.meshgrid(x, x, indexing="ij")
        W = np.outer(w, w)
        z1 = L[0, 0] * X1 + L[0, 1] * X2
        z2 = L[1, 0] * X1 + L[1, 1] * X2
        vals = np.asarray(Ae.evaluate(z1 + fv)) * np.asarray(Be.evaluate(z2 + gu))
        val = float(np.sum(W * vals))
        mag = float(np.sum(W * np.abs(vals)))
        if prev is not None and abs(val - prev) <= rtol * max(mag, 1e-300):
            return math.exp(uv) * val
        prev = val
        n *= 2
    raise QuadratureError(f"tilted Gaussian moment did not converge with {max_nodes} nodes")


def moment_oracle(
    A: WickSeries,
    B: WickSeries,
    f: Func1D,
    g: Func1D,
    u: Func1D | None = None,
    v: Func1D | None = None,
    quad: QuadSpec = DEFAULT_QUAD,
) -> float:
    """E[(A(I(f))◇e^{◇I(u)})·(B(I(g))◇e^{◇I(v)})]; missing u, v mean zero."""

    def ip(p, q):
        return 0.0 if p is None or q is None else inner(p, q, quad)

    return tilted_moment(A, B, ip(f, f), ip(g, g), ip(f, g), ip(f, v), ip(g, u), ip(u, v))


def _moment_pair(problem: SdeProblem, grid: GridSpec | None) -> tuple[float, float, float]:
    """(E[X₁²], E[X₁X̂₁], E[X̂₁²]) without the e^{2∫a} factor."""
    ff, fs, ss = problem.gram_args, problem.args_sigma, problem.sigma2
    if grid is None:
        return _moment(problem, ff, ff, ff, fs, fs, ss), float("nan"), float("nan")
    p = problem.projected(grid)
    pf, pfs, pss = p.gram_args, p.args_sigma, p.sigma2
    e11 = _moment(problem, ff, ff, ff, fs, fs, ss)
    # ⟨f_k, P g_l⟩ = ⟨P f_k, P g_l⟩ and ⟨f_k, Pσ⟩ = ⟨P f_k, Pσ⟩
    e12 = _moment(problem, ff, pf, pf, pfs, pfs, pss)
    e22 = _moment(problem, pf, pf, pf, pfs, pfs, pss)
    return e11, e12, e22


def _moment(problem, gram_a, gram_b, gram_ab, a_v, b_u, uv) -> float:
    if problem.multivariate:
        return linwa_moment(problem.F, problem.F, gram_ab, a_v, b_u, uv)
    F = problem.F
    return tilted_moment(F, F, float(gram_a[0, 0]), float(gram_b[0, 0]), float(gram_ab[0, 0]),
                         float(a_v[0]), float(b_u[0]), float(uv))


def second_moment(problem: SdeProblem) -> float:
    """E[X₁²]."""
    return problem.growth**2 * _moment_pair(problem, None)[0]


def mean_terminal(problem: SdeProblem) -> float:
    """E[X₁] = e^{∫a}·c₀."""
    c0 = problem.F.coefs.flat[0] if problem.multivariate else problem.F.coefficients[0]
    return problem.growth * float(c0)


def mse_optimal(
    problem: SdeProblem,
    grid: GridSpec,
    mode: str = "deterministic",
    samples: int = 200_000,
    seed: int = 0,
    streams: int = 4,
    sequential: bool = False,
) -> tuple[float, float | None]:
    """E[(X₁ − X̂₁ⁿ)²] and, in ``mc`` mode, its standard error."""
    if mode == "deterministic":
        e11, e12, e22 = _moment_pair(problem, grid)
        return problem.growth**2 * (e11 - 2 * e12 + e22), None
    if mode != "mc":
        raise ValueError(f"unknown mode {mode!r}")
    res = mc_mean(_mse_stat(problem, grid), samples, seed, streams, sequential)
    return res.mean, res.stderr


def _mse_stat(problem: SdeProblem, grid: GridSpec):
    K = len(problem.args)
    sampler = JointSampler(list(problem.args) + [problem.sigma], grid, problem.quad)

    def stat(rng, size):
        s = sampler.draw(rng, size)
        exact = s.exact_integrals
        values = exact[:, :K].T if problem.multivariate else exact[:, 0]
        x1 = exact_terminal(problem, values, exact[:, K])
        xh = optimal_terminal(problem, grid, s)
        return (x1 - xh) ** 2

    return stat


def mse_closed_form(problem: SdeProblem, grid: GridSpec) -> float:
    """e^{2∫a}(e^{‖h‖²} − e^{‖P_n h‖²}), h = f + σ, for the Wick-exponential initial value."""
    _require_wick_exp(problem)
    h = problem.f + problem.sigma
    r = residual_gram(h, h, grid, problem.quad)
    return problem.growth**2 * math.exp(inner(h, h, problem.quad)) * -math.expm1(-r)


# ---------------------------------------------------------------- constants


def _require_wick_exp(problem: SdeProblem) -> None:
    if problem.multivariate or problem.F.kind != "wick_exp":
        raise ValueError("closed form needs the Wick-exponential initial value")


def closed_form_constant(problem: SdeProblem) -> float:
    """‖f′ + σ′‖ exp(‖f+σ‖²/2 + ∫a)/√12."""
    _require_wick_exp(problem)
    h = problem.f + problem.sigma
    dh = h.prime()
    return math.sqrt(inner(dh, dh, problem.quad)) * math.exp(inner(h, h, problem.quad) / 2 + problem.int_a) / math.sqrt(12)


def _direction_gram(dirs: Sequence[Func1D], quad: QuadSpec) -> np.ndarray:
    D = len(dirs)
    G = np.empty((D, D))
    for i in range(D):
        for j in range(i, D):
            G[i, j] = G[j, i] = inner(dirs[i], dirs[j], quad)
    return G


def optimal_constant(problem: SdeProblem) -> float:
    """C with C² = e^{2∫a}/12 ∫ E[((Σ_k f_k′(s) ∂_kF + σ′(s)F) ◇ e^{◇I(σ)})²] ds.

    The integrand is a quadratic form in (f_1′(s), ..., f_K′(s), σ′(s)), so
    the s-integral reduces to the Gram of these derivatives against the
    matrix of tilted moments of (∂_1F, ..., ∂_KF, F).
    """
    quad = problem.quad
    dirs = [g.prime() for g in problem.args] + [problem.sigma.prime()]
    G = _direction_gram(dirs, quad)
    fs, ss = problem.args_sigma, problem.sigma2
    ga = problem.gram_args
    D = len(dirs)
    M = np.empty((D, D))
    if problem.multivariate:
        parts = [problem.F.partial(k) for k in range(problem.F.K)] + [problem.F]
        for i in range(D):
            for j in range(i, D):
                M[i, j] = M[j, i] = linwa_moment(parts[i], parts[j], ga, fs, fs, ss)
    else:
        S = problem.series
        parts = [derivative(S), S]
        v, fsv = float(ga[0, 0]), float(fs[0])
        for i in range(D):
            for j in range(i, D):
                if G[i, j] == 0.0 and (G[i, i] == 0.0 or G[j, j] == 0.0):
                    M[i, j] = M[j, i] = 0.0
                    continue
                M[i, j] = M[j, i] = tilted_moment(parts[i], parts[j], v, v, v, fsv, fsv, ss)
    c2 = problem.growth**2 / 12 * float(np.sum(G * M))
    return math.sqrt(max(c2, 0.0))


# ---------------------------------------------------------------- S-transform


def s_transform_solution(problem: SdeProblem, t, grid: GridSpec) -> float:
    """(S X₁)(g) for g = Σ t_i 1_{cell i}: (Σ c_m ⟨f,g⟩^m) e^{⟨σ,g⟩} e^{∫a}."""
    t = np.asarray(t, dtype=float)
    if t.shape != (grid.n,):
        raise ValueError(f"expected {grid.n} cell values")
    S_i = cell_integrals(problem.sigma, grid, problem.quad)
    F_i = np.array([cell_integrals(g, grid, problem.quad) for g in problem.args])
    x = F_i @ t
    if problem.multivariate:
        body = _polyval_nd(problem.F.coefs, x)
    else:
        body = float(np.polynomial.polynomial.polyval(x[0], problem.F.coefficients))
    return body * math.exp(float(S_i @ t)) * problem.growth


def _polyval_nd(c: np.ndarray, x: np.ndarray) -> float:
    """Σ_a c_a Π_k x_k^{a_k}."""
    out = c
    for k in range(c.ndim):
        out = np.tensordot(x[k] ** np.arange(c.shape[k]), out, axes=(0, 0))
    return float(out)


def cross_moment(problem: SdeProblem, A: ChaosPoly, max_degree: int = 12) -> float:
    """E[X₁·A] for a chaos polynomial A on a grid.

    E[X₁ A] = e^{∫a} Σ_a c_a a! [λ^a] (SA)(Σ_k λ_k f_k + σ), and
    (SA)(g) = Σ_α a_α Π_i G_i^{α_i} with G_i = ∫_{cell i} g. The polynomial
    in λ is sampled on roots of unity and its coefficients recovered by FFT.
    """
    if len(A) == 0:
        return 0.0
    deg = A.max_degree
    if deg > max_degree:
        raise ChaosError(f"cross moment limited to total degree {max_degree}, got {deg}")
    grid = A.grid
    S_i = cell_integrals(problem.sigma, grid, problem.quad)
    F_i = np.array([cell_integrals(g, grid, problem.quad) for g in problem.args])  # (K, n)
    K = F_i.shape[0]
    coefs = problem.F.coefs if problem.multivariate else problem.F.coefficients
    shape = tuple(min(s, deg + 1) for s in coefs.shape)
    N = deg + 1
    # balance the sample radius so coefficients of all orders are resolved
    rho = np.array([_radius(F_i[k], S_i) for k in range(K)])
    roots = np.exp(2j * np.pi * np.arange(N) / N)
    axes = np.meshgrid(*[rho[k] * roots for k in range(K)], indexing="ij")
    lam = np.stack([a.reshape(-1) for a in axes])  # (K, N^K)
    G = S_i[:, None] + F_i.T @ lam  # (n, P)
    dmax = int(A.exps.max())
    table = np.empty((grid.n, dmax + 1, G.shape[1]), dtype=complex)
    table[:, 0] = 1.0
    for d in range(1, dmax + 1):
        table[:, d] = table[:, d - 1] * G
    vals = A.coefs @ monomial_products(A.exps, table)  # (P,)
    spectrum = np.fft.fftn(vals.reshape((N,) * K)) / N**K
    total = 0.0
    for idx in np.ndindex(*shape):
        c = coefs[idx] if problem.multivariate else coefs[idx[0]]
        if c == 0.0:
            continue
        # fft bin j holds N·ρ^j·[λ^j] (degree < N, so no aliasing)
        coef = spectrum[idx].real / float(np.prod([rho[k] ** idx[k] for k in range(K)]))
        total += c * float(np.prod([math.factorial(i) for i in idx])) * coef
    return problem.growth * total


def _radius(F: np.ndarray, S: np.ndarray) -> float:
    nf = float(np.sum(np.abs(F)))
    if nf == 0.0:
        return 1.0
    return max(1.0, float(np.sum(np.abs(S))) / nf) if np.any(S) else 1.0


# ---------------------------------------------------------------- standard setups


def wick_exp_problem(degree: int = DEFAULT_SERIES_DEGREE) -> SdeProblem:
    """a = s², σ = s(1−s), f = 1−s, Wick-exponential initial value."""
    return SdeProblem.from_strings("s^2", "s*(1-s)", "1-s", "wick_exp", degree=degree)


def exp_problem(degree: int = DEFAULT_SERIES_DEGREE) -> SdeProblem:
    """The same coefficients with initial value exp(I(f))."""
    return SdeProblem.from_strings("s^2", "s*(1-s)", "1-s", "exp", degree=degree)
