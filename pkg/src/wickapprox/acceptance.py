"""Acceptance checks with their numeric thresholds.

Each check returns a :class:`CheckResult`; ``tests/test_acceptance.py`` and
``wickapprox selftest`` both run them.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .chaos import Caps, ChaosPoly, eval_at, inner_product, wick_exp, wick_mul
from .fnspace import (
    Func1D,
    GridSpec,
    StepFunc,
    bridge_integral,
    indicator,
    inner,
    residual_gram,
    tv_and_sup,
)
from .functional import apply_to_chaos, derivative, from_scalar
from .lawsim import JointSampler, mc_mean, stream
from .schemes import (
    initial_value_pathwise,
    milstein_exact_moments,
    milstein_mc,
    mse_scheme,
    wick_euler,
    wick_wp,
    wick_wp_product_form,
)
from .solution import (
    SdeProblem,
    closed_form_constant,
    exp_problem,
    moment_oracle,
    mse_closed_form,
    mse_optimal,
    optimal_constant,
    optimal_terminal,
    wick_exp_problem,
)

__all__ = ["CheckResult", "CHECKS", "run_checks", "PRINTED_EXP_C2"]

# published reference value for C² with the exp initial value (differs from the computed one)
PRINTED_EXP_C2 = (math.exp(1 / 6) + math.exp(1 / 2)) * math.exp(8 / 15) / 12


@dataclass
class CheckResult:
    number: int
    title: str
    passed: bool
    summary: str
    seconds: float = 0.0
    budget: float = float("inf")
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict} [{self.number:2d}] {self.title}: {self.summary} ({self.seconds:.2f} s, budget {self.budget:g} s)"


def _timed(number: int, title: str, budget: float):
    def wrap(fn: Callable[..., tuple[bool, str, dict]]):
        def run(**kw) -> CheckResult:
            t0 = time.perf_counter()
            ok, summary, details = fn(**kw)
            dt = time.perf_counter() - t0
            if dt > budget:
                summary += f"; over time budget"
            return CheckResult(number, title, bool(ok) and dt <= budget, summary, dt, budget, details)

        run.number = number
        run.title = title
        return run

    return wrap


@_timed(1, "Brownian-bridge cell integral", 1.0)
def check_bridge_integral(**_):
    worst = 0.0
    for n in (1, 2, 4, 8):
        g = GridSpec(n)
        for i in range(n):
            for j in range(n):
                want = 1.0 / (12 * n**3) if i == j else 0.0
                worst = max(worst, abs(bridge_integral(g, i, j) - want))
    return worst <= 1e-14, f"max abs error {worst:.2e} (limit 1e-14)", {"max_error": worst}


@_timed(2, "residual covariance limit and rate", 5.0)
def check_covariance_rate(**_):
    f = Func1D.from_expr("s^2")
    g = Func1D.from_expr("exp(s)")
    fp, gp = f.prime(), g.prime()
    limit = inner(fp, gp) / 12
    tv_f, sup_f = tv_and_sup(fp)
    tv_g, sup_g = tv_and_sup(gp)
    worst_ratio = 0.0
    for n in range(4, 257):
        dev = abs(n * n * residual_gram(f, g, GridSpec(n)) - limit)
        bound = 2 * (tv_f * sup_g + tv_g * sup_f) / (6 * n)
        worst_ratio = max(worst_ratio, dev / bound)
    return worst_ratio <= 1.0, f"max deviation/bound {worst_ratio:.3f} over n=4..256", {"ratio": worst_ratio}


def _pairing_sum(gram: np.ndarray, left: list[int], right: list[int]) -> float:
    if len(left) != len(right):
        return 0.0
    total = 0.0
    for perm in itertools.permutations(right):
        total += math.prod(gram[i, j] for i, j in zip(left, perm))
    return total


@_timed(3, "Wick-theorem inner products", 5.0)
def check_wick_theorem(seed: int = 20240601, **_):
    rng = stream(seed, 3)
    worst = 0.0
    for _case in range(200):
        n = int(rng.integers(1, 4))
        grid = GridSpec(n)
        k = int(rng.integers(1, 5))
        W = rng.normal(size=(k, n))
        split = int(rng.integers(0, k + 1))
        left, right = list(range(split)), list(range(split, k))
        polys = [ChaosPoly.linear(grid, W[i], cap=4) for i in range(k)]

        def prod(idx):
            p = ChaosPoly.constant(grid, 1.0, 4)
            for i in idx:
                p = wick_mul(p, polys[i], 4, prune=0.0)
            return p

        got = inner_product(prod(left), prod(right))
        gram = grid.delta * W @ W.T
        want = _pairing_sum(gram, left, right)
        worst = max(worst, abs(got - want))
    return worst <= 1e-12, f"max abs error {worst:.2e} over 200 cases (limit 1e-12)", {"max_error": worst}


@_timed(4, "closed-form constant for the Wick exponential", 10.0)
def check_closed_form(**_):
    configs = {
        "sigma=0": ("s^2", "0", "1-s"),
        "a=0": ("0", "s*(1-s)", "1-s"),
        "full": ("s^2", "s*(1-s)", "1-s"),
    }
    worst = 0.0
    vals = {}
    for name, (a, s, f) in configs.items():
        p = SdeProblem.from_strings(a, s, f, "wick_exp")
        c_q, c_cf = optimal_constant(p), closed_form_constant(p)
        rel = abs(c_q - c_cf) / abs(c_cf)
        vals[name] = (c_q, c_cf, rel)
        worst = max(worst, rel)
    text = "; ".join(f"{k}: {v[0]:.12f} vs {v[1]:.12f}" for k, v in vals.items())
    return worst <= 1e-8, f"max rel diff {worst:.1e} ({text})", {"configs": vals}


@_timed(5, "optimal-approximation rate", 5.0)
def check_optimal_rate(**_):
    p = wick_exp_problem()
    c2 = closed_form_constant(p) ** 2
    ns = [2**k for k in range(1, 10)]
    scaled = [n * n * mse_closed_form(p, GridSpec(n)) for n in ns]
    increasing = all(b > a for a, b in zip(scaled, scaled[1:]))
    rel = abs(scaled[-1] - c2) / c2
    ok = increasing and rel <= 0.01
    return ok, f"n²·MSE at 512 = {scaled[-1]:.6f}, C² = {c2:.6f}, rel {rel:.2e}, increasing={increasing}", {
        "n": ns,
        "scaled": scaled,
        "C2": c2,
    }


@_timed(6, "general functional: oracle vs Monte Carlo", 120.0)
def check_general_functional(seed: int = 20240606, samples: int = 200_000, **_):
    p = exp_problem()
    c2 = optimal_constant(p) ** 2
    rows = {}
    ok = True
    for n in (8, 32):
        g = GridSpec(n)
        det, _ = mse_optimal(p, g)
        mc, se = mse_optimal(p, g, "mc", samples=samples, seed=seed + n, streams=4, sequential=True)
        z = abs(det - mc) / se
        rows[n] = (det, mc, se, z)
        ok &= z <= 4
    l8, l32 = rows[8][1] * 64, rows[32][1] * 1024
    extrapolated = (16 * l32 - l8) / 15
    rel = abs(extrapolated - c2) / c2
    ok &= rel <= 0.05
    summary = (
        f"z(8)={rows[8][3]:.2f}, z(32)={rows[32][3]:.2f}; C² oracle {c2:.6f}, MC-extrapolated {extrapolated:.6f} "
        f"(rel {rel:.3f}), printed reference {PRINTED_EXP_C2:.6f}"
    )
    return ok, summary, {"rows": rows, "C2": c2, "extrapolated": extrapolated, "reference": PRINTED_EXP_C2}


@_timed(7, "rate with a truncated initial value", 120.0)
def check_initial_value_rate(seed: int = 20240607, samples: int = 200_000, **_):
    p = SdeProblem.from_strings("0", "0", "s", "wick_exp")
    fp = p.f.prime()
    dF = derivative(p.series)
    target = inner(fp, fp) * moment_oracle(dF, dF, p.f, p.f) / 12
    scaled = {}
    for n in (16, 64):
        g = GridSpec(n)
        sampler = JointSampler([p.f], g)

        def stat(rng, size, g=g, sampler=sampler):
            s = sampler.draw(rng, size)
            exact = p.series.evaluate(s.exact_integrals[:, 0])
            return (exact - initial_value_pathwise(p, g, s.increments)) ** 2

        r = mc_mean(stat, samples, seed + n, 4, sequential=True)
        scaled[n] = (n * n * r.mean, n * n * r.stderr)
    rel = abs(scaled[64][0] - target) / target
    return rel <= 0.10, f"n²·MSE(64) = {scaled[64][0]:.5f} ± {scaled[64][1]:.5f}, target {target:.5f}, rel {rel:.3f}", {
        "scaled": scaled,
        "target": target,
    }


@_timed(8, "scheme product form equivalence", 60.0)
def check_scheme_equivalence(**_):
    p = exp_problem()
    worst = 0.0
    for n in (2, 4, 8):
        g = GridSpec(n)
        caps = Caps(prune=0.0)
        a = wick_wp(p, g, caps).terminal.to_dict()
        b = wick_wp_product_form(p, g, caps).terminal.to_dict()
        worst = max(worst, max(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in set(a) | set(b)))
    return worst <= 1e-10, f"max coefficient difference {worst:.2e} (limit 1e-10)", {"max_error": worst}


@_timed(9, "Wick–Wagner–Platen rate", 300.0)
def check_scheme_rate(**_):
    p = wick_exp_problem()
    C = closed_form_constant(p)
    caps = Caps(degree=8)
    rmse = {}
    for n in (4, 8, 16):
        rmse[n] = math.sqrt(mse_scheme(p, wick_wp(p, GridSpec(n), caps))[0])
    euler16 = math.sqrt(mse_scheme(p, wick_euler(p, GridSpec(16), caps))[0])
    rel = abs(16 * rmse[16] - C) / C
    ratio = rmse[8] / rmse[16]
    ok = rel <= 0.15 and 1.7 <= ratio <= 2.3 and euler16 > rmse[16]
    return ok, (
        f"16·RMSE/C = {16 * rmse[16] / C:.4f}, RMSE(8)/RMSE(16) = {ratio:.3f}, "
        f"Euler {euler16:.3e} > WP {rmse[16]:.3e}"
    ), {"rmse": rmse, "euler16": euler16, "C": C}


@_timed(10, "Milstein counterexample", 120.0)
def check_milstein(seed: int = 20240610, samples: int = 100_000, **_):
    p = SdeProblem.from_strings("0", "1", "1-s", "wick_exp")
    mean256 = milstein_exact_moments(p, GridSpec(256))["mean"]
    rel = abs(mean256 - math.exp(0.5)) / math.exp(0.5)
    floors = {}
    ok = rel <= 0.01
    for n in (4, 8, 16):
        det = milstein_exact_moments(p, GridSpec(n))["mse"]
        mc = milstein_mc(p, GridSpec(n), samples, seed + n, sequential=True)
        floors[n] = (det, mc["mse"], mc["mse_stderr"])
        # the squared error is heavy-tailed; MC only corroborates the exact value
        ok &= det >= 0.05 and abs(det - mc["mse"]) <= 4 * mc["mse_stderr"]
    low = min(v[0] for v in floors.values())
    return ok, f"E[x_256] = {mean256:.6f} vs e^0.5 (rel {rel:.1e}); min MSE over n=4,8,16 = {low:.3f}", {
        "mean256": mean256,
        "mse": floors,
    }


@_timed(11, "step-function residual", 1.0)
def check_step_function(**_):
    r = 1 / math.sqrt(2)
    f = indicator(r, 1.0)
    worst, bound_ok = 0.0, True
    for n in range(3, 65):
        got = residual_gram(f, f, GridSpec(n))
        theta = n * r - math.floor(n * r)
        worst = max(worst, abs(got - theta * (1 - theta) / n))
        bound_ok &= got <= 2 / n
    return worst <= 1e-12 and bound_ok, f"max abs error {worst:.2e}, bound 2/n holds: {bound_ok}", {"max_error": worst}


@_timed(12, "conditional expectation factorizes over Wick products", 10.0)
def check_conditional_factorization(seed: int = 20240612, **_):
    rng = stream(seed, 12)
    n = 4
    grid = GridSpec(n)
    cap = 20
    specs = [
        (Func1D.constant(0.3), StepFunc(grid, rng.normal(scale=0.5, size=n)),
         StepFunc(grid, rng.normal(scale=0.7, size=n)), [0.5, -1.0, 0.25, 0.4]),
        (Func1D.from_expr("s"), Func1D.from_expr("cos(s)/2"), Func1D.from_expr("1-s^2"), [1.0, 0.5, -0.3, 0.2]),
    ]
    worst = 0.0
    for a, sigma, f, poly in specs:
        prob = SdeProblem(a, sigma, f, from_scalar("polynomial", inner(f, f), 3, poly))
        pr = prob.projected(grid)
        cond_F = apply_to_chaos(prob.F, pr.avg_args[0], grid, cap, prune=0.0)
        cond_E = wick_exp(ChaosPoly.linear(grid, pr.avg_sigma, cap), cap, prune=0.0)
        product = wick_mul(cond_F, cond_E, cap, prune=0.0).scale(prob.growth)
        draws = rng.normal(size=(25, n)) * math.sqrt(grid.delta)
        got = optimal_terminal(prob, grid, draws)
        want = eval_at(product, draws)
        worst = max(worst, float(np.max(np.abs(got - want))))
    return worst <= 1e-10, f"max pathwise difference {worst:.2e} over 50 draws (limit 1e-10)", {"max_error": worst}


CHECKS = [
    check_bridge_integral,
    check_covariance_rate,
    check_wick_theorem,
    check_closed_form,
    check_optimal_rate,
    check_general_functional,
    check_initial_value_rate,
    check_scheme_equivalence,
    check_scheme_rate,
    check_milstein,
    check_step_function,
    check_conditional_factorization,
]


def run_checks(numbers=None, echo: Callable[[str], None] | None = None) -> list[CheckResult]:
    out = []
    for chk in CHECKS:
        if numbers and chk.number not in numbers:
            continue
        res = chk()
        if echo:
            echo(res.line())
        out.append(res)
    return out
