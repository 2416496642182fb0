import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wickapprox.chaos import (
    ChaosError,
    ChaosPoly,
    eval_at,
    s_transform,
    wick_exp,
    wick_mul,
)
from wickapprox.fnspace import (
    Func1D,
    GridSpec,
    StepFunc,
    cell_integrals,
    inner,
    project,
)
from wickapprox.functional import LinWA, WickSeries, apply_to_chaos, from_scalar
from wickapprox.lawsim import JointSampler, stream
from wickapprox.solution import (
    SdeProblem,
    closed_form_constant,
    cross_moment,
    exact_terminal,
    exp_problem,
    mean_terminal,
    moment_oracle,
    mse_closed_form,
    mse_optimal,
    optimal_constant,
    optimal_terminal,
    s_transform_solution,
    second_moment,
    tilted_moment,
    wick_exp_problem,
)

F = Func1D.from_expr


def step_problem(rng, n, M, a="0"):
    g = GridSpec(n)
    f = StepFunc(g, rng.normal(size=n) * 0.8, "f")
    sig = StepFunc(g, rng.normal(size=n) * 0.6, "sigma")
    coefs = rng.normal(size=M + 1) / np.array([math.factorial(m) for m in range(M + 1)])
    return g, SdeProblem(F(a), sig, f, WickSeries(coefs, inner(f, f)))


# ---------------------------------------------------------------- pathwise


def test_exact_terminal_first_chaos(oracle):
    # one cell with ⟨f,σ⟩ = 0.2 and ‖σ‖² = 0.3
    g = GridSpec(1)
    sig = StepFunc(g, [math.sqrt(0.3)])
    f = StepFunc(g, [0.2 / math.sqrt(0.3)])
    p = SdeProblem(F("0"), sig, f, from_scalar("polynomial", inner(f, f), 1, [0.0, 1.0]))
    assert exact_terminal(p, 0.5, 0.1) == pytest.approx(oracle["exact_terminal_first_chaos_example"], rel=1e-13)


def test_exact_terminal_without_diffusion():
    p = SdeProblem.from_strings("0", "0", "1-s", "sin")
    S = p.series
    assert exact_terminal(p, 0.37, 0.0) == pytest.approx(S.evaluate(0.37), rel=1e-15)


def test_exact_terminal_wick_exp_closed_form():
    p = wick_exp_problem()
    h = p.f + p.sigma
    for I_f, I_s in [(0.3, -0.2), (-1.0, 0.4)]:
        want = math.exp(I_f + I_s - inner(h, h) / 2) * p.growth
        assert exact_terminal(p, I_f, I_s) == pytest.approx(want, rel=1e-13)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_translation_identity_against_chaos(n):
    rng = np.random.default_rng(40 + n)
    g, p = step_problem(rng, n, 6)
    cap = 36
    x0 = apply_to_chaos(p.F, p.f.values, g, cap, prune=0.0)
    tilt = wick_exp(ChaosPoly.linear(g, p.sigma.values, cap), cap, prune=0.0)
    X1 = wick_mul(x0, tilt, cap, prune=0.0)
    w = rng.normal(size=(20, n)) * math.sqrt(g.delta)
    I_f, I_s = w @ p.f.values, w @ p.sigma.values
    np.testing.assert_allclose(exact_terminal(p, I_f, I_s), eval_at(X1, w), rtol=1e-9, atol=1e-9)


def test_optimal_terminal_is_exact_for_step_data():
    rng = np.random.default_rng(2)
    g, p = step_problem(rng, 3, 5, a="s^2")
    w = rng.normal(size=(10, 3)) * math.sqrt(g.delta)
    np.testing.assert_allclose(
        optimal_terminal(p, g, w), exact_terminal(p, w @ p.f.values, w @ p.sigma.values), rtol=1e-12
    )


def test_optimal_terminal_wick_exp_closed_form():
    p = wick_exp_problem()
    g = GridSpec(4)
    w = np.random.default_rng(8).normal(size=(5, 4)) * 0.5
    Pf, Ps = project(p.f, g), project(p.sigma, g)
    hat = w @ (Pf.values + Ps.values)
    want = np.exp(hat - inner(Pf + Ps, Pf + Ps) / 2) * p.growth
    np.testing.assert_allclose(optimal_terminal(p, g, w), want, rtol=1e-12)


def test_optimal_terminal_preserves_mean_by_monte_carlo():
    p = exp_problem()
    g = GridSpec(4)
    s = JointSampler([p.f, p.sigma], g).draw(stream(17), 100_000)
    vals = optimal_terminal(p, g, s)
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(vals.mean() - mean_terminal(p)) <= 4 * se


def test_mean_preserved_deterministically():
    p = exp_problem()
    unit = from_scalar("polynomial", 0.0, 0, [1.0])
    for n in (1, 3, 8):
        pr = p.projected(GridSpec(n))
        v = float(pr.gram_args[0, 0])
        m = tilted_moment(p.F, unit, v, 0.0, 0.0, 0.0, float(pr.args_sigma[0]), 0.0)
        assert p.growth * m == pytest.approx(mean_terminal(p), rel=1e-12)


# ---------------------------------------------------------------- moments


def test_moment_oracle_identities():
    unit = from_scalar("polynomial", 1.0, 0, [1.0])
    u, v = F("s"), F("exp(s)")
    f = F("1-s")
    assert moment_oracle(unit, unit, f, f, u, v) == pytest.approx(math.exp(inner(u, v)), rel=1e-12)
    sig = F("s*(1-s)")
    assert moment_oracle(unit, unit, f, f, sig, sig) == pytest.approx(math.exp(inner(sig, sig)), rel=1e-12)
    lin = from_scalar("polynomial", inner(f, f), 1, [0.0, 1.0])
    assert moment_oracle(lin, lin, f, f) == pytest.approx(inner(f, f), rel=1e-12)


def test_moment_oracle_wick_exp_pair():
    f, g, u, v = F("s"), F("1-s^2"), F("sin(s)"), F("0.3")
    A = from_scalar("wick_exp", inner(f, f), 40)
    B = from_scalar("wick_exp", inner(g, g), 40)
    want = math.exp(inner(f + u, g + v))
    assert moment_oracle(A, B, f, g, u, v) == pytest.approx(want, rel=1e-10)


def test_tilted_moment_rejects_indefinite_gram():
    S = from_scalar("exp", 1.0, 5)
    with pytest.raises(ValueError):
        tilted_moment(S, S, 1.0, 1.0, 2.0)


# ---------------------------------------------------------------- constants


def test_closed_form_constant_values(oracle):
    p = SdeProblem.from_strings("0", "0", "s", "wick_exp")
    assert closed_form_constant(p) == pytest.approx(oracle["closed_constant_f_s"], rel=1e-13)
    assert closed_form_constant(p) == pytest.approx(math.exp(1 / 6) / math.sqrt(12), rel=1e-13)
    assert closed_form_constant(wick_exp_problem()) == pytest.approx(oracle["closed_constant_full"], rel=1e-13)
    assert closed_form_constant(SdeProblem.from_strings("0", "0", "0", "wick_exp")) == 0.0
    with pytest.raises(ValueError):
        closed_form_constant(exp_problem())


@pytest.mark.parametrize(
    "a, sigma, f", [("0", "0", "s"), ("s^2", "0", "1-s"), ("0", "s*(1-s)", "1-s"), ("s^2", "s*(1-s)", "1-s")]
)
def test_optimal_constant_matches_closed_form(a, sigma, f):
    p = SdeProblem.from_strings(a, sigma, f, "wick_exp")
    assert optimal_constant(p) == pytest.approx(closed_form_constant(p), rel=1e-8)


def test_optimal_constant_without_diffusion():
    p = SdeProblem.from_strings("0", "0", "s^2", "sin", degree=40)
    dF = p.series.derivative()
    want = math.sqrt(inner(p.f.prime(), p.f.prime()) * dF.norm2() / 12)
    assert optimal_constant(p) == pytest.approx(want, rel=1e-10)


def test_exp_initial_constant(oracle):
    p = exp_problem()
    assert 12 * optimal_constant(p) ** 2 == pytest.approx(oracle["exp_12C2_optimal"], rel=1e-10)


def test_multivariate_product_constant(oracle):
    one = from_scalar("polynomial", 1.0, 1, [0.0, 1.0])
    f1, f2 = F("s"), F("exp(s)")
    L = LinWA.from_terms([(1.0, [(one, f1), (one, f2)])])
    p = SdeProblem(F("s^2"), F("s*(1-s)"), None, L)
    assert optimal_constant(p) == pytest.approx(oracle["multivariate_product_constant"], rel=1e-8)


def test_multivariate_univariate_consistency():
    uni = exp_problem()
    L = LinWA.univariate(uni.F, uni.f)
    multi = SdeProblem(uni.a, uni.sigma, None, L)
    assert optimal_constant(multi) == pytest.approx(optimal_constant(uni), rel=1e-10)
    g = GridSpec(4)
    assert mse_optimal(multi, g)[0] == pytest.approx(mse_optimal(uni, g)[0], rel=1e-9)


# ---------------------------------------------------------------- MSE


def test_mse_optimal_small_case(oracle):
    p = SdeProblem.from_strings("0", "0", "s", "wick_exp")
    val, se = mse_optimal(p, GridSpec(2))
    assert se is None
    assert val == pytest.approx(oracle["mse_optimal_wick_exp_f_s_n2"], rel=1e-10)
    assert val == pytest.approx(math.exp(1 / 3) - math.exp(5 / 16), rel=1e-10)


def test_mse_optimal_step_data_is_zero():
    rng = np.random.default_rng(4)
    g, p = step_problem(rng, 4, 5)
    val, _ = mse_optimal(p, g)
    assert abs(val) <= 1e-10 * second_moment(p)


@pytest.mark.parametrize("n", [2, 8, 32])
def test_deterministic_mse_matches_closed_form(n):
    p = wick_exp_problem()
    assert mse_optimal(p, GridSpec(n))[0] == pytest.approx(mse_closed_form(p, GridSpec(n)), rel=1e-9)


def test_rate_to_constant():
    p = wick_exp_problem()
    C2 = closed_form_constant(p) ** 2
    scaled = [n * n * mse_closed_form(p, GridSpec(n)) for n in (8, 16, 32, 64, 128, 256, 512)]
    assert all(a < b for a, b in zip(scaled, scaled[1:]))
    assert scaled[-1] == pytest.approx(C2, rel=0.01)


def test_deterministic_and_monte_carlo_mse_agree():
    p = exp_problem()
    det, _ = mse_optimal(p, GridSpec(8))
    mc, se = mse_optimal(p, GridSpec(8), "mc", 200_000, 31, 4, True)
    assert abs(det - mc) <= 4 * se


# ---------------------------------------------------------------- S-transform and cross moments


def test_s_transform_solution_examples():
    p = exp_problem()
    g = GridSpec(3)
    assert s_transform_solution(p, np.zeros(3), g) == pytest.approx(mean_terminal(p))
    q = wick_exp_problem()
    t = np.array([0.3, -1.0, 0.5])
    Fi, Si = cell_integrals(q.f, g), cell_integrals(q.sigma, g)
    assert s_transform_solution(q, t, g) == pytest.approx(math.exp(t @ (Fi + Si)) * q.growth, rel=1e-12)


@given(st.lists(st.floats(-1.5, 1.5), min_size=3, max_size=3), st.integers(0, 1000))
@settings(max_examples=25)
def test_s_transform_factorizes_on_step_problems(t, seed):
    rng = np.random.default_rng(seed)
    g, p = step_problem(rng, 3, 5, a="s")
    x0 = apply_to_chaos(p.F, p.f.values, g, 6, prune=0.0)
    Si = cell_integrals(p.sigma, g)
    # g = Σ t_i 1_{cell i} has cell integrals t_i Δ
    want = s_transform(x0, np.asarray(t) * g.delta) * math.exp(float(Si @ t)) * p.growth
    assert s_transform_solution(p, t, g) == pytest.approx(want, rel=1e-10, abs=1e-12)


def test_cross_moment_examples():
    g = GridSpec(3)
    p = exp_problem()
    assert cross_moment(p, ChaosPoly.constant(g)) == pytest.approx(mean_terminal(p), rel=1e-13)
    q = SdeProblem.from_strings("0", "s*(1-s)", "1-s", "wick_exp")
    h = q.f + q.sigma
    for i in range(3):
        alpha = [0, 0, 0]
        alpha[i] = 1
        assert cross_moment(q, ChaosPoly.monomial(g, alpha)) == pytest.approx(cell_integrals(h, g)[i], rel=1e-12)
    unit = SdeProblem(F("0"), F("s*(1-s)"), F("1-s"), from_scalar("polynomial", 1.0, 0, [1.0]))
    S0 = cell_integrals(unit.sigma, g)[0]
    assert cross_moment(unit, ChaosPoly.monomial(g, (2, 0, 0), cap=3)) == pytest.approx(S0**2, rel=1e-12)


def test_cross_moment_against_monte_carlo():
    p = exp_problem()
    g = GridSpec(2)
    A = ChaosPoly.from_dict(g, {(0, 0): 0.2, (1, 0): 1.0, (1, 2): -0.5, (3, 1): 0.7}, 6)
    det = cross_moment(p, A)
    s = JointSampler([p.f, p.sigma], g).draw(stream(21), 400_000)
    x = exact_terminal(p, s.exact_integrals[:, 0], s.exact_integrals[:, 1]) * eval_at(A, s.increments)
    assert abs(det - x.mean()) <= 4 * x.std(ddof=1) / math.sqrt(x.size)


def test_cross_moment_wick_exp_pairing():
    # E[e^{◇I(h)} M_α] = Π_i (∫_cell h)^{α_i} for a ≡ 0
    q = SdeProblem.from_strings("0", "s*(1-s)", "1-s", "wick_exp", degree=40)
    g = GridSpec(3)
    Hi = cell_integrals(q.f + q.sigma, g)
    alpha = (2, 1, 3)
    want = math.prod(Hi[i] ** alpha[i] for i in range(3))
    assert cross_moment(q, ChaosPoly.monomial(g, alpha, cap=6)) == pytest.approx(want, rel=1e-10)


def test_cross_moment_exact_at_default_degree_limit():
    q = SdeProblem.from_strings("0", "s*(1-s)", "1-s", "wick_exp", degree=40)
    g = GridSpec(3)
    Hi = cell_integrals(q.f + q.sigma, g)
    alpha = (5, 4, 3)
    want = math.prod(Hi[i] ** alpha[i] for i in range(3))
    assert cross_moment(q, ChaosPoly.monomial(g, alpha, cap=12)) == pytest.approx(want, rel=1e-10)


def test_cross_moment_degree_limit():
    g = GridSpec(2)
    A = ChaosPoly.monomial(g, (7, 7), cap=14)
    with pytest.raises(ChaosError):
        cross_moment(wick_exp_problem(), A)
    assert math.isfinite(cross_moment(wick_exp_problem(), A, max_degree=14))
