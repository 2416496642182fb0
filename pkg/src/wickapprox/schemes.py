"""Approximation schemes built as chaos polynomials on the grid increments.

Per step k the coefficients are frozen at s_k = k/n and written in terms of
α_k = a_kΔ + σ_kΔ_kW and the higher-order part

    β_k = σ_k² (Δ_kW)^{◇2}/2 + σ_k³ (Δ_kW)^{◇3}/6 + (σ′_k + a_kσ_k)Δ_kW Δ + (a′_k + a_k²)Δ²/2,

so the Wick–Wagner–Platen step is x_{k+1} = x_k ◇ (1 + α_k + β_k).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .chaos import (
    Caps,
    ChaosError,
    ChaosPoly,
    eval_at,
    expectation,
    hermite_table,
    norm2,
    ordinary_mul,
    wick_mul,
    wick_power_linear,
)
from .fnspace import GridSpec, cell_integrals, strong_weights
from .functional import LinWA, apply_to_chaos
from .lawsim import JointSampler, mc_mean
from .solution import SdeProblem, cross_moment, exact_terminal, second_moment

__all__ = [
    "SchemeOutput",
    "step_coefficients",
    "scheme_cap",
    "build_initial",
    "initial_value_pathwise",
    "wick_wp",
    "wick_wp_product_form",
    "corrected_intermediate",
    "wick_euler",
    "milstein_ordinary",
    "milstein_mean",
    "milstein_exact_moments",
    "milstein_pathwise",
    "milstein_mc",
    "mse_scheme",
]


@dataclass
class SchemeOutput:
    terminal: ChaosPoly
    per_step: list[ChaosPoly] | None = None
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class StepCoefficients:
    a: np.ndarray
    da: np.ndarray
    s: np.ndarray
    ds: np.ndarray


def step_coefficients(problem: SdeProblem, grid: GridSpec) -> StepCoefficients:
    """a, a′, σ, σ′ at the left grid points."""
    t = grid.left_points

    def vals(fn):
        if fn is None:
            raise ValueError("scheme needs differentiable coefficients")
        return np.broadcast_to(np.asarray(fn(t), dtype=float), (grid.n,)).copy()

    return StepCoefficients(
        vals(problem.a.value), vals(problem.a.derivative), vals(problem.sigma.value), vals(problem.sigma.derivative)
    )


def scheme_cap(caps: Caps, grid: GridSpec) -> int:
    """Degree cap for scheme iterates.

    An explicit ``caps.degree`` wins; otherwise the exact degree
    initial level + 3n, limited to 12.
    """
    if caps.degree is not None:
        return caps.degree
    return min(12, caps.initial_for(grid) + 3 * grid.n)


def _unit_poly(grid: GridSpec, k: int, coefs, cap: int) -> ChaosPoly:
    """Σ_j coefs[j] M_{j e_k}."""
    terms = {}
    for j, c in enumerate(coefs):
        if c != 0.0 or j == 0:
            alpha = [0] * grid.n
            alpha[k] = j
            terms[tuple(alpha)] = float(c)
    return ChaosPoly.from_dict(grid, terms, cap)


def _wp_factor(c: StepCoefficients, grid: GridSpec, k: int, cap: int) -> ChaosPoly:
    d = grid.delta
    a, da, s, ds = c.a[k], c.da[k], c.s[k], c.ds[k]
    c0 = 1.0 + a * d + (da + a * a) * d * d / 2
    c1 = s + (ds + a * s) * d
    return _unit_poly(grid, k, [c0, c1, s * s / 2, s**3 / 6], cap)


def _linear_factor(c: StepCoefficients, grid: GridSpec, k: int, cap: int) -> ChaosPoly:
    return _unit_poly(grid, k, [1.0 + c.a[k] * grid.delta, c.s[k]], cap)


# ---------------------------------------------------------------- initial value


def build_initial(problem: SdeProblem, grid: GridSpec, caps: Caps = Caps()) -> ChaosPoly:
    """Chaos form of F̃(Iⁿ(f)) = Σ_{m≤level} c_m (Iⁿ f)^{◇m} with strong weights."""
    cap = scheme_cap(caps, grid)
    level = caps.initial_for(grid)
    if not problem.multivariate:
        w, _ = strong_weights(problem.f, grid)
        return apply_to_chaos(problem.F, w, grid, level, caps.prune).with_cap(cap)
    F = problem.F
    # level <= cap, so Wick powers beyond the level are never needed
    powers = []
    for k, g in enumerate(F.args):
        w, _ = strong_weights(g, grid)
        powers.append([wick_power_linear(w, grid, m, cap=cap) for m in range(min(F.coefs.shape[k], level + 1))])
    total = ChaosPoly.zero(grid, cap)
    for idx in np.ndindex(*F.coefs.shape):
        c = F.coefs[idx]
        if c == 0.0 or sum(idx) > level:
            continue
        term = ChaosPoly.constant(grid, float(c), cap)
        for k, m in enumerate(idx):
            term = wick_mul(term, powers[k][m], cap, prune=0.0)
        total = total + term
    return total.with_cap(cap, caps.prune)


def initial_value_pathwise(problem: SdeProblem, grid: GridSpec, increments, level: int | None = None):
    """F̃(Iⁿ(f)) evaluated directly at increments (n,) or (N, n).

    Uses the Hermite recursion at the discrete variance ‖f‖²_n; no chaos
    polynomial is formed, so large grids are fine.
    """
    inc = np.asarray(increments, dtype=float)
    level = grid.n if level is None else level
    if problem.multivariate:
        F = problem.F
        ws = np.array([strong_weights(g, grid)[0] for g in F.args])
        gram = grid.delta * ws @ ws.T
        coefs = F.coefs.copy()
        for idx in np.ndindex(*coefs.shape):
            if sum(idx) > level:
                coefs[idx] = 0.0
        return LinWA(F.args, coefs).evaluate(ws @ inc.T, gram)
    w, var_n = strong_weights(problem.f, grid)
    c = problem.F.coefficients[: min(level, problem.F.M) + 1]
    table = hermite_table(inc @ w, var_n, c.size - 1)
    out = np.tensordot(c, table, axes=(0, 0))
    return out if np.ndim(out) else float(out)


# ---------------------------------------------------------------- schemes


def _start(problem: SdeProblem, grid: GridSpec, caps: Caps) -> tuple[ChaosPoly, float]:
    """Initial chaos value with its designed level truncation split off.

    The truncation at the initial level is part of the scheme design, so it is
    reported separately and not charged against the cap budget.
    """
    x0 = build_initial(problem, grid, caps)
    return ChaosPoly(grid, x0.exps, x0.coefs, x0.degree_cap, 0.0), x0.dropped_mass


def _check_dropped(out: ChaosPoly, caps: Caps, name: str) -> None:
    mass = norm2(out)
    if out.dropped_mass > caps.max_dropped * max(mass, 1e-300):
        raise ChaosError(
            f"{name}: dropped mass {out.dropped_mass:.3e} exceeds {caps.max_dropped:g} of the terminal norm² "
            f"{mass:.3e}; raise the degree cap"
        )


def _diagnostics(name: str, terminal: ChaosPoly, sizes: list[int], initial_truncation: float) -> dict:
    return {
        "scheme": name,
        "initial_truncation_mass": initial_truncation,
        "dropped_mass": terminal.dropped_mass,
        "max_degree": terminal.max_degree,
        "terms": len(terminal),
        "term_counts": sizes,
    }


def wick_wp(problem: SdeProblem, grid: GridSpec, caps: Caps = Caps(), keep_steps: bool = False) -> SchemeOutput:
    """Wick–Wagner–Platen scheme with its correction term.

    The correction Σ_l σ′_lΔ Δ_lW ◇ x_l ◇ Π_{i>l}(1 + α_i) is accumulated as
    Y_{k+1} = Y_k ◇ (1 + α_k) + σ′_kΔ x_k ◇ Δ_kW, which is the same sum since
    the Π chain of independent linear factors is a Wick product. The terminal
    is x_n − Y_n/2.
    """
    cap = scheme_cap(caps, grid)
    if cap < 3:
        raise ValueError("the Wick–Wagner–Platen scheme needs a degree cap of at least 3")
    c = step_coefficients(problem, grid)
    x, x0_cut = _start(problem, grid, caps)
    y = ChaosPoly.zero(grid, cap)
    steps = [x] if keep_steps else None
    sizes = [len(x)]
    for k in range(grid.n):
        dk = _unit_poly(grid, k, [0.0, 1.0], cap)
        if len(y):
            y = wick_mul(y, _linear_factor(c, grid, k, cap), cap, caps.prune)
        if c.ds[k] != 0.0:
            y = y + wick_mul(x, dk, cap, caps.prune).scale(c.ds[k] * grid.delta)
        x = wick_mul(x, _wp_factor(c, grid, k, cap), cap, caps.prune)
        sizes.append(len(x))
        if keep_steps:
            steps.append(x)
    terminal = x - y.scale(0.5)
    _check_dropped(terminal, caps, "wick_wp")
    return SchemeOutput(terminal, steps, _diagnostics("wick_wp", terminal, sizes, x0_cut))


def corrected_intermediate(problem: SdeProblem, grid: GridSpec, k: int, caps: Caps = Caps()) -> ChaosPoly:
    """X̃_k = x_k − ½ Σ_{l<k} σ′_lΔ Δ_lW ◇ x_l ◇ Π_{i=l+1}^{n−1}(1 + α_i).

    Built term by term with the product chain to n−1 for every k, and the
    chain formed with ordinary products.
    """
    cap = scheme_cap(caps, grid)
    c = step_coefficients(problem, grid)
    xs = [_start(problem, grid, caps)[0]]
    for j in range(k):
        xs.append(wick_mul(xs[-1], _wp_factor(c, grid, j, cap), cap, caps.prune))
    corr = ChaosPoly.zero(grid, cap)
    for l in range(k):
        if c.ds[l] == 0.0:
            continue
        chain = ChaosPoly.constant(grid, 1.0, cap)
        for i in range(l + 1, grid.n):
            chain = ordinary_mul(chain, _linear_factor(c, grid, i, cap), cap, caps.prune)
        dl = _unit_poly(grid, l, [0.0, c.ds[l] * grid.delta], cap)
        corr = corr + wick_mul(wick_mul(dl, xs[l], cap, caps.prune), chain, cap, caps.prune)
    return xs[k] - corr.scale(0.5)


def wick_wp_product_form(problem: SdeProblem, grid: GridSpec, caps: Caps = Caps()) -> SchemeOutput:
    """F̃(Iⁿf) ◇ 𝓔 with 𝓔 = Π(1+α_k+β_k) − ½Σ_l σ′_lΔ Δ_lW Π_{k<l}(1+α_k+β_k) Π_{k>l}(1+α_k)."""
    cap = scheme_cap(caps, grid)
    if cap < 3:
        raise ValueError("the Wick–Wagner–Platen scheme needs a degree cap of at least 3")
    c = step_coefficients(problem, grid)
    n = grid.n
    one = ChaosPoly.constant(grid, 1.0, cap)
    prefix = [one]
    for k in range(n):
        prefix.append(ordinary_mul(prefix[-1], _wp_factor(c, grid, k, cap), cap, caps.prune))
    suffix = [one] * (n + 1)
    for k in range(n - 1, -1, -1):
        suffix[k] = ordinary_mul(_linear_factor(c, grid, k, cap), suffix[k + 1], cap, caps.prune)
    corr = ChaosPoly.zero(grid, cap)
    for l in range(n):
        if c.ds[l] == 0.0:
            continue
        dl = _unit_poly(grid, l, [0.0, c.ds[l] * grid.delta], cap)
        corr = corr + ordinary_mul(ordinary_mul(prefix[l], dl, cap, caps.prune), suffix[l + 1], cap, caps.prune)
    factor = prefix[n] - corr.scale(0.5)
    x0, x0_cut = _start(problem, grid, caps)
    terminal = wick_mul(x0, factor, cap, caps.prune)
    _check_dropped(terminal, caps, "wick_wp_product_form")
    out = SchemeOutput(terminal, None, _diagnostics("wick_wp_product_form", terminal, [len(factor)], x0_cut))
    out.diagnostics["factor"] = factor
    return out


def wick_euler(problem: SdeProblem, grid: GridSpec, caps: Caps = Caps(), keep_steps: bool = False) -> SchemeOutput:
    """x_{k+1} = x_k ◇ (1 + a_kΔ + σ_k Δ_kW)."""
    cap = scheme_cap(caps, grid)
    c = step_coefficients(problem, grid)
    x, x0_cut = _start(problem, grid, caps)
    steps = [x] if keep_steps else None
    sizes = [len(x)]
    for k in range(grid.n):
        x = wick_mul(x, _linear_factor(c, grid, k, cap), cap, caps.prune)
        sizes.append(len(x))
        if keep_steps:
            steps.append(x)
    _check_dropped(x, caps, "wick_euler")
    return SchemeOutput(x, steps, _diagnostics("wick_euler", x, sizes, x0_cut))


def milstein_ordinary(problem: SdeProblem, grid: GridSpec, caps: Caps = Caps()) -> SchemeOutput:
    """x_{k+1} = x_k·(1 + a_kΔ + σ_kΔ_kW + σ_k²((Δ_kW)² − Δ)/2) with ordinary products.

    The initial value is the grid approximation of F(I(f)). With a ≡ 0,
    σ ≡ 1 and a non-adapted X_0 this is the classical Milstein step that
    fails to converge.
    """
    cap = scheme_cap(caps, grid)
    c = step_coefficients(problem, grid)
    x, x0_cut = _start(problem, grid, caps)
    sizes = [len(x)]
    for k in range(grid.n):
        fac = _unit_poly(grid, k, [1.0 + c.a[k] * grid.delta, c.s[k], c.s[k] ** 2 / 2], cap)
        x = ordinary_mul(x, fac, cap, caps.prune)
        sizes.append(len(x))
    _check_dropped(x, caps, "milstein_ordinary")
    return SchemeOutput(x, None, _diagnostics("milstein_ordinary", x, sizes, x0_cut))


def _milstein_poly(a: float, s: float, d: float):
    """p(y) = 1 + aΔ + s y + s²(y² − Δ)/2 as ascending coefficients."""
    return np.array([1.0 + a * d - s * s * d / 2, s, s * s / 2])


def _shifted_moments(p: np.ndarray, shift: np.ndarray, d: float, power: int) -> np.ndarray:
    """E[p(Z + shift)^power] for Z ~ N(0, Δ), exact by 4-point Gauss–Hermite."""
    x, w = np.polynomial.hermite_e.hermegauss(4)
    w = w / math.sqrt(2 * math.pi)
    y = shift[:, None] + math.sqrt(d) * x[None, :]
    return (np.polynomial.polynomial.polyval(y, p) ** power) @ w


def milstein_exact_moments(problem: SdeProblem, grid: GridSpec) -> dict:
    """Moments of the Milstein terminal started from the exact X_0 = e^{◇I(f)}.

    By the Girsanov shift E[e^{◇I(g)} G(ΔW)] = E[G(ΔW + ∫_cells g)], each
    product over steps factorizes into one-dimensional Gaussian moments.
    Returns E[x_n], E[x_n²], E[X_1 x_n], E[X_1²] and the MSE.
    """
    if problem.multivariate or problem.F.kind != "wick_exp":
        raise ValueError("exact Milstein moments need the Wick-exponential initial value")
    c = step_coefficients(problem, grid)
    d = grid.delta
    F_i = cell_integrals(problem.f, grid, problem.quad)
    S_i = cell_integrals(problem.sigma, grid, problem.quad)
    polys = [_milstein_poly(c.a[k], c.s[k], d) for k in range(grid.n)]

    def prod(shifts, power):
        return math.prod(float(_shifted_moments(polys[k], np.array([shifts[k]]), d, power)[0]) for k in range(grid.n))

    ff, fs, ss = problem.f2, problem.f_sigma, problem.sigma2
    g = problem.growth
    mean = prod(F_i, 1)
    second = math.exp(ff) * prod(2 * F_i, 2)
    cross = g * math.exp(ff + fs) * prod(2 * F_i + S_i, 1)
    exact2 = g * g * math.exp(ff + 2 * fs + ss)
    return {"mean": mean, "second": second, "cross": cross, "exact_second": exact2, "mse": exact2 - 2 * cross + second}


def milstein_mean(problem: SdeProblem, grid: GridSpec, initial: str = "exact") -> float:
    """E[x_n] for the Milstein scheme with a Wick-exponential initial value.

    ``exact`` starts from e^{◇I(f)}; ``truncated`` from e^{◇Iⁿ(f)} with the
    strong weights (the untruncated grid initial value).
    """
    if initial == "exact":
        return milstein_exact_moments(problem, grid)["mean"]
    if initial != "truncated":
        raise ValueError(f"unknown initial value {initial!r}")
    c = step_coefficients(problem, grid)
    w, _ = strong_weights(problem.f, grid)
    shifts = w * grid.delta
    return math.prod(
        float(_shifted_moments(_milstein_poly(c.a[k], c.s[k], grid.delta), np.array([shifts[k]]), grid.delta, 1)[0])
        for k in range(grid.n)
    )


def milstein_pathwise(problem: SdeProblem, grid: GridSpec, increments, I_f):
    """Milstein terminal from the exact X_0 = F(I(f)), evaluated per path."""
    c = step_coefficients(problem, grid)
    w = np.asarray(increments, dtype=float)
    x = np.asarray(problem.series.evaluate(np.asarray(I_f, dtype=float)), dtype=float)
    d = grid.delta
    for k in range(grid.n):
        wk = w[..., k]
        x = x * (1.0 + c.a[k] * d + c.s[k] * wk + c.s[k] ** 2 * (wk * wk - d) / 2)
    return x


def milstein_mc(
    problem: SdeProblem, grid: GridSpec, samples: int, seed: int = 0, streams: int = 4, sequential: bool = False
) -> dict:
    """Monte Carlo mean of the exact-start Milstein terminal and its MSE against X_1."""
    sampler = JointSampler([problem.f, problem.sigma], grid, problem.quad)

    def draw(rng, size):
        s = sampler.draw(rng, size)
        xn = milstein_pathwise(problem, grid, s.increments, s.exact_integrals[:, 0])
        return xn, exact_terminal(problem, s.exact_integrals[:, 0], s.exact_integrals[:, 1])

    mean = mc_mean(lambda rng, b: draw(rng, b)[0], samples, seed, streams, sequential)
    mse = mc_mean(lambda rng, b: np.subtract(*draw(rng, b)) ** 2, samples, seed, streams, sequential)
    return {"mean": mean.mean, "mean_stderr": mean.stderr, "mse": mse.mean, "mse_stderr": mse.stderr}


# ---------------------------------------------------------------- error


def mse_scheme(
    problem: SdeProblem,
    output: SchemeOutput | ChaosPoly,
    mode: str = "deterministic",
    samples: int = 200_000,
    seed: int = 0,
    streams: int = 4,
    sequential: bool = False,
) -> tuple[float, float | None]:
    """E[(X_1 − X̃_n)²]; deterministic via chaos moments or by Monte Carlo."""
    terminal = output.terminal if isinstance(output, SchemeOutput) else output
    grid = terminal.grid
    if mode == "deterministic":
        try:
            cross = cross_moment(problem, terminal)
        except ChaosError as exc:
            warnings.warn(f"{exc}; falling back to Monte Carlo", RuntimeWarning, stacklevel=2)
            mode = "mc"
        else:
            return second_moment(problem) - 2 * cross + norm2(terminal), None
    if mode != "mc":
        raise ValueError(f"unknown mode {mode!r}")
    K = len(problem.args)
    sampler = JointSampler(list(problem.args) + [problem.sigma], grid, problem.quad)

    def stat(rng, size):
        s = sampler.draw(rng, size)
        ex = s.exact_integrals
        values = ex[:, :K].T if problem.multivariate else ex[:, 0]
        return (exact_terminal(problem, values, ex[:, K]) - eval_at(terminal, s.increments)) ** 2

    res = mc_mean(stat, samples, seed, streams, sequential)
    return res.mean, res.stderr
