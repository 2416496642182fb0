"""Wick-analytic functionals F(I(f)) = Σ c_m I(f)^{◇m}.

Pathwise, I(f)^{◇m} = h^m_v(I(f)) with v = ‖f‖², so a :class:`WickSeries`
is a Hermite series in the scalar I(f). Catalog entries carry closed forms
for their coefficients and for their pathwise values at any Hermite
variance; arbitrary callables go through Gauss–Hermite quadrature.

:class:`LinWA` is the multivariate counterpart: a coefficient tensor over
Wick monomials Π_k I(f_k)^{◇a_k} of finitely many arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .chaos import DEFAULT_PRUNE, ChaosPoly, _power_terms, hermite_table
from .fnspace import Func1D, GridSpec, QuadratureError

__all__ = [
    "WickSeries",
    "LinWA",
    "CATALOG",
    "from_scalar",
    "from_quadrature",
    "derivative",
    "eval_series",
    "apply_to_chaos",
    "exp_quadratic_taylor",
    "linwa_moment",
]

CATALOG = ("wick_exp", "exp", "sin", "cos", "polynomial")
_TAIL_TERMS = 400


def _catalog_coef(kind: str, params: tuple, v: float, m: np.ndarray) -> np.ndarray:
    """Closed-form c_m for catalog entries, expanded at variance v."""
    m = np.asarray(m, dtype=np.int64)
    logfact = np.array([math.lgamma(k + 1) for k in m.reshape(-1)]).reshape(m.shape)
    inv_fact = np.exp(-logfact)
    if kind == "wick_exp":
        return inv_fact
    if kind == "exp":
        return math.exp(v / 2) * inv_fact
    if kind in ("sin", "cos"):
        odd = m % 2 == 1
        sel = odd if kind == "sin" else ~odd
        half = (m - 1) // 2 if kind == "sin" else m // 2
        sign = np.where(half % 2 == 0, 1.0, -1.0)
        return np.where(sel, sign * math.exp(-v / 2) * inv_fact, 0.0)
    if kind == "polynomial":
        return _polynomial_coefs(params, v, m)
    raise ValueError(f"unknown catalog entry {kind!r}")


def _polynomial_coefs(p: tuple, v: float, m: np.ndarray) -> np.ndarray:
    # x^j = Σ_k j!/(k! 2^k (j−2k)!) v^k h^{j−2k}_v(x)
    out = np.zeros(m.shape)
    for idx, mm in np.ndenumerate(m):
        acc = 0.0
        for j in range(int(mm), len(p)):
            if (j - mm) % 2:
                continue
            k = (j - mm) // 2
            acc += p[j] * math.factorial(j) / (math.factorial(k) * math.factorial(int(mm)) * 2**k) * v**k
        out[idx] = acc
    return out


@dataclass(frozen=True, eq=False)
class WickSeries:
    """Σ_{m≤M} c_m h^m_v(x), the pathwise form of Σ c_m I(f)^{◇m} with ‖f‖² = v.

    ``kind``/``params``/``coef_variance`` describe a catalog origin so that
    pathwise values and tails have closed forms; ``generic`` series only
    have their stored coefficients.
    """

    coefficients: np.ndarray
    variance: float
    kind: str = "generic"
    params: tuple = ()
    coef_variance: float | None = None
    source: Callable | None = field(default=None, repr=False)

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=float).reshape(-1)
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)
        if self.variance < 0:
            raise ValueError("variance must be nonnegative")
        if self.coef_variance is None:
            object.__setattr__(self, "coef_variance", float(self.variance))

    @property
    def M(self) -> int:
        return self.coefficients.size - 1

    @property
    def growth_constant(self) -> float:
        """max over stored m ≥ 1 of (m!|c_m|)^{1/m}."""
        best = 0.0
        for m in range(1, self.coefficients.size):
            c = abs(self.coefficients[m])
            if c > 0:
                best = max(best, math.exp((math.lgamma(m + 1) + math.log(c)) / m))
        if not math.isfinite(best):
            raise ValueError("growth constant is not finite over the stored range")
        return best

    def with_variance(self, v: float) -> "WickSeries":
        """Same coefficients read as a series in I(g) with ‖g‖² = v."""
        return replace(self, variance=float(v))

    def norm2(self) -> float:
        """Σ c_m² m! v^m, the second moment of the stored series."""
        m = np.arange(self.coefficients.size)
        logf = np.array([math.lgamma(k + 1) for k in m])
        with np.errstate(divide="ignore"):
            w = np.exp(logf + m * np.log(self.variance)) if self.variance > 0 else (m == 0).astype(float)
        return float(np.sum(self.coefficients**2 * w))

    def tail_coefficients(self, extra: int = _TAIL_TERMS) -> np.ndarray | None:
        """c_m for m = M+1 .. M+extra when the origin has a closed form."""
        if self.kind not in CATALOG:
            return None
        return _catalog_coef(self.kind, self.params, self.coef_variance, np.arange(self.M + 1, self.M + 1 + extra))

    def truncation_mass(self) -> float:
        """Σ_{m>M} c_m² m! v^m; zero for polynomials, NaN when unknown."""
        tail = self.tail_coefficients()
        if tail is None:
            return float("nan")
        if self.variance == 0:
            return 0.0
        m = np.arange(self.M + 1, self.M + 1 + tail.size)
        logw = np.array([math.lgamma(k + 1) for k in m]) + m * math.log(self.variance)
        nz = tail != 0
        terms = np.exp(2 * np.log(np.abs(tail[nz])) + logw[nz])
        return float(math.fsum(terms))

    def derivative(self) -> "WickSeries":
        return derivative(self)

    def evaluate(self, y):
        """Pathwise value Σ_{m≥0} c_m h^m_v(y), closed form when the catalog allows."""
        y = np.asarray(y, dtype=float)
        w, v0 = self.variance, self.coef_variance
        if self.kind == "wick_exp":
            out = np.exp(y - w / 2)
        elif self.kind == "exp":
            out = np.exp(y + (v0 - w) / 2)
        elif self.kind == "sin":
            out = math.exp((w - v0) / 2) * np.sin(y)
        elif self.kind == "cos":
            out = math.exp((w - v0) / 2) * np.cos(y)
        else:
            return eval_series(self, y)
        return out if out.ndim else float(out)

    def __call__(self, y):
        return self.evaluate(y)


def derivative(S: WickSeries) -> WickSeries:
    """c'_m = (m+1) c_{m+1}; catalog origins map to their derivatives."""
    c = S.coefficients
    dc = c[1:] * np.arange(1, c.size) if c.size > 1 else np.zeros(1)
    kind, params = S.kind, S.params
    if kind == "sin":
        kind = "cos"
    elif kind == "cos":
        # (cos)' = −sin: keep the generic path, the sign breaks the catalog form
        kind = "generic"
    elif kind == "polynomial":
        p = params
        params = tuple(j * p[j] for j in range(1, len(p))) or (0.0,)
    elif kind not in ("wick_exp", "exp"):
        kind = "generic"
    source = None
    return WickSeries(dc, S.variance, kind, params, S.coef_variance, source)


def eval_series(S: WickSeries, y):
    """Σ_m c_m h^m_v(y) over the stored coefficients."""
    y = np.asarray(y, dtype=float)
    table = hermite_table(y, S.variance, S.M)
    out = np.tensordot(S.coefficients, table, axes=(0, 0))
    return out if np.ndim(out) else float(out)


def from_scalar(F: str | Callable, v: float, M: int, params: Sequence[float] | None = None, **quad) -> WickSeries:
    """Hermite coefficients c_0..c_M of F at variance v.

    ``F`` is a catalog name (``wick_exp``, ``exp``, ``sin``, ``cos``,
    ``polynomial`` with ``params`` the monomial coefficients p_0, p_1, ...)
    or a callable, which is expanded by :func:`from_quadrature`.
    """
    if M < 0:
        raise ValueError("M must be nonnegative")
    v = float(v)
    if isinstance(F, str):
        if F not in CATALOG:
            raise ValueError(f"unknown functional {F!r}; choose from {', '.join(CATALOG)}")
        p = tuple(float(x) for x in (params or ()))
        if F == "polynomial" and not p:
            raise ValueError("polynomial needs its coefficient list")
        coefs = _catalog_coef(F, p, v, np.arange(M + 1))
        return WickSeries(coefs, v, F, p, v)
    if v <= 0:
        raise ValueError("quadrature expansion needs a positive variance")
    return from_quadrature(F, v, M, **quad)


@lru_cache(maxsize=16)
def _gh_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.hermite_e.hermegauss(n)
    w = w / math.sqrt(2 * math.pi)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _orthonormal_hermite(x: np.ndarray, M: int) -> np.ndarray:
    """He_m(x)/√m! for m = 0..M (standard normal weight)."""
    out = np.empty((M + 1, x.size))
    out[0] = 1.0
    if M >= 1:
        out[1] = x
    for m in range(1, M):
        out[m + 1] = (x * out[m] - math.sqrt(m) * out[m - 1]) / math.sqrt(m + 1)
    return out


def from_quadrature(
    F: Callable, v: float, M: int, start: int = 64, max_nodes: int = 1024, tol: float = 1e-13
) -> WickSeries:
    """c_m = E[F(Z) h^m_v(Z)]/(m! v^m), Z ~ N(0, v), by Gauss–Hermite.

    The node count doubles until the orthonormal coordinates E[F(Z) He_m/√m!]
    agree to ``tol`` relative to their largest entry.
    """
    prev = None
    n = start
    while n <= max_nodes:
        x, w = _gh_rule(n)
        vals = np.asarray(F(math.sqrt(v) * x), dtype=float)
        b = _orthonormal_hermite(x, M) @ (w * vals)
        if prev is not None and np.max(np.abs(b - prev)) <= tol * max(1.0, float(np.max(np.abs(b)))):
            m = np.arange(M + 1)
            scale = np.exp(np.array([0.5 * math.lgamma(k + 1) for k in m]) + 0.5 * m * math.log(v))
            return WickSeries(b / scale, v, "generic", (), v, F)
        prev = b
        n *= 2
    raise QuadratureError(f"Hermite coefficients did not converge with {max_nodes} nodes")


def apply_to_chaos(
    S: WickSeries, weights: Sequence[float], grid: GridSpec, cap: int, prune: float = DEFAULT_PRUNE
) -> ChaosPoly:
    """Σ_{m≤cap} c_m ℓ^{◇m} with ℓ = Σ_i w_i Δ_iW.

    Levels are generated as dense multinomial blocks. Stored levels above the
    cap are charged to ``dropped_mass`` at the discrete variance Δ‖w‖².
    """
    w = np.asarray(weights, dtype=float)
    var = grid.delta * float(np.dot(w, w))
    top = min(cap, S.M)
    exps, coefs = [], []
    for m in range(top + 1):
        c = S.coefficients[m]
        if c == 0.0:
            continue
        e, k = _power_terms(w, m)
        exps.append(e)
        coefs.append(c * k)
    dropped = 0.0
    for m in range(top + 1, S.M + 1):
        dropped += S.coefficients[m] ** 2 * math.factorial(m) * var**m
    if not exps:
        return ChaosPoly.zero(grid, cap)
    return ChaosPoly.build(grid, np.concatenate(exps), np.concatenate(coefs), cap, dropped, prune)


# ---------------------------------------------------------------- lin(WA)


def exp_quadratic_taylor(lin: np.ndarray, quad: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    """Taylor coefficients [s^a] exp(Σ_i lin_i s_i + Σ_{i≤j} quad_ij s_i s_j).

    ``lin`` has shape (D,) or (D, N) for a batch of N linear parts; ``quad``
    is read on and above its diagonal. The result has shape ``shape`` (one
    axis per variable, truncated box) followed by the batch axis if any.
    """
    lin = np.asarray(lin, dtype=float)
    batched = lin.ndim == 2
    lin2 = lin.reshape(len(shape), -1)
    D = len(shape)
    T = np.ones((lin2.shape[1],))
    for i in range(D):
        k = np.arange(shape[i])
        inv_fact = np.exp(-np.array([math.lgamma(j + 1) for j in k]))
        series = np.power.outer(lin2[i], k) * inv_fact  # (N, shape_i)
        T = T[..., None] * series.reshape((series.shape[0],) + (1,) * i + (shape[i],))
    for i in range(D):
        for j in range(i, D):
            b = float(quad[i, j])
            if b == 0.0:
                continue
            ai, aj = i + 1, j + 1
            reach = (shape[i] - 1) // 2 if i == j else min(shape[i], shape[j]) - 1
            new = T.copy()
            term = 1.0
            for m in range(1, reach + 1):
                term *= b / m
                src = [slice(None)] * T.ndim
                dst = [slice(None)] * T.ndim
                if i == j:
                    src[ai], dst[ai] = slice(0, shape[i] - 2 * m), slice(2 * m, shape[i])
                else:
                    src[ai], src[aj] = slice(0, shape[i] - m), slice(0, shape[j] - m)
                    dst[ai], dst[aj] = slice(m, shape[i]), slice(m, shape[j])
                new[tuple(dst)] += term * T[tuple(src)]
            T = new
    return np.moveaxis(T, 0, -1) if batched else T[0]


def _fact_weights(shape: Sequence[int]) -> np.ndarray:
    out = np.ones(())
    for n in shape:
        out = np.multiply.outer(out, np.array([math.factorial(k) for k in range(n)], dtype=float))
    return out


@dataclass(frozen=True, eq=False)
class LinWA:
    """Σ_a A_a Π_k I(f_k)^{◇a_k} over a box of multi-indices a.

    ``args`` are the argument functions f_1..f_K; ``coefs`` has one axis per
    argument.
    """

    args: tuple
    coefs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coefs, dtype=float)
        if c.ndim != len(self.args):
            raise ValueError("coefficient tensor needs one axis per argument")
        c.setflags(write=False)
        object.__setattr__(self, "args", tuple(self.args))
        object.__setattr__(self, "coefs", c)

    @property
    def K(self) -> int:
        return len(self.args)

    @classmethod
    def from_terms(cls, terms: Sequence[tuple[float, Sequence[tuple[WickSeries, Func1D]]]]) -> "LinWA":
        """Build from Σ weight · ◇_j S_j(I(g_j)).

        Factors sharing the same argument object (or the same expression text)
        are merged into one axis; their series multiply as Wick powers of
        that argument.
        """
        args: list[Func1D] = []
        keys: list = []

        def slot(g: Func1D) -> int:
            key = ("expr", g.name) if hasattr(g, "expr") else ("id", id(g))
            if key not in keys:
                keys.append(key)
                args.append(g)
            return keys.index(key)

        prepared = []
        for weight, factors in terms:
            per_axis: dict[int, np.ndarray] = {}
            for S, g in factors:
                k = slot(g)
                c = S.coefficients
                per_axis[k] = np.convolve(per_axis[k], c) if k in per_axis else c.copy()
            prepared.append((float(weight), per_axis))
        K = len(args)
        shape = [1] * K
        for _, per_axis in prepared:
            for k, c in per_axis.items():
                shape[k] = max(shape[k], c.size)
        total = np.zeros(shape)
        for weight, per_axis in prepared:
            t = np.array(weight)
            for k in range(K):
                c = per_axis.get(k, np.ones(1))
                pad = np.zeros(shape[k])
                pad[: c.size] = c
                t = np.multiply.outer(t, pad)
            total = total + t
        return cls(tuple(args), total)

    @classmethod
    def univariate(cls, S: WickSeries, f: Func1D) -> "LinWA":
        return cls((f,), S.coefficients)

    def partial(self, k: int) -> "LinWA":
        """∂/∂x_k: the coefficient tensor shifts down along axis k."""
        c = np.moveaxis(self.coefs, k, 0)
        n = c.shape[0]
        if n == 1:
            d = np.zeros_like(c)
        else:
            d = c[1:] * np.arange(1, n).reshape((-1,) + (1,) * (c.ndim - 1))
        return LinWA(self.args, np.moveaxis(d, 0, k))

    def evaluate(self, values: np.ndarray, gram: np.ndarray) -> np.ndarray:
        """Pathwise value at I(f_k) = values[k] (shape (K,) or (K, N)).

        Wick monomials of correlated arguments are a!·[s^a] of
        exp(⟨s, x⟩ − ½ sᵀGs) with G the Gram of the arguments.
        """
        values = np.asarray(values, dtype=float)
        G = np.asarray(gram, dtype=float)
        quad = -np.triu(G, 1) - 0.5 * np.diag(np.diag(G))
        T = exp_quadratic_taylor(values, quad, self.coefs.shape)
        weighted = self.coefs * _fact_weights(self.coefs.shape)
        axes = tuple(range(self.K))
        out = np.tensordot(weighted, T, axes=(axes, axes))
        return out if np.ndim(out) else float(out)


def linwa_moment(
    A: LinWA, B: LinWA, gram_ab: np.ndarray, a_v: np.ndarray, b_u: np.ndarray, uv: float
) -> float:
    """E[(A◇e^{◇I(u)})·(B◇e^{◇I(v)})] for A over (f_k), B over (g_l).

    Inputs are ⟨f_k, g_l⟩ (``gram_ab``), ⟨f_k, v⟩ (``a_v``), ⟨g_l, u⟩
    (``b_u``) and ⟨u, v⟩. The generating function is
    e^{⟨u,v⟩} exp(Σ s_k⟨f_k,v⟩ + Σ t_l⟨g_l,u⟩ + Σ s_k t_l⟨f_k,g_l⟩).
    """
    K, L = A.K, B.K
    D = K + L
    lin = np.concatenate([np.asarray(a_v, float).reshape(K), np.asarray(b_u, float).reshape(L)])
    quad = np.zeros((D, D))
    quad[:K, K:] = np.asarray(gram_ab, float).reshape(K, L)
    shape = tuple(A.coefs.shape) + tuple(B.coefs.shape)
    T = exp_quadratic_taylor(lin, quad, shape)
    wa = A.coefs * _fact_weights(A.coefs.shape)
    wb = B.coefs * _fact_weights(B.coefs.shape)
    inner = np.tensordot(T, wb, axes=(tuple(range(K, D)), tuple(range(L))))
    return math.exp(uv) * float(np.tensordot(wa, inner, axes=K))
