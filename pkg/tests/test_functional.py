import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wickapprox.chaos import ChaosPoly, eval_at, expectation, norm2, wick_mul
from wickapprox.fnspace import Func1D, GridSpec
from wickapprox.functional import (
    LinWA,
    WickSeries,
    apply_to_chaos,
    derivative,
    eval_series,
    exp_quadratic_taylor,
    from_quadrature,
    from_scalar,
    linwa_moment,
)
from wickapprox.solution import tilted_moment

V = 1 / 3


def test_first_chaos():
    S = from_scalar("polynomial", V, 6, [0.0, 1.0])
    np.testing.assert_allclose(S.coefficients, [0, 1, 0, 0, 0, 0, 0], atol=1e-15)


def test_exp_coefficients():
    S = from_scalar("exp", 0.7, 10)
    m = np.arange(11)
    np.testing.assert_allclose(S.coefficients, math.exp(0.35) / np.array([math.factorial(k) for k in m]), rtol=1e-14)


def test_sin_coefficients(oracle):
    S = from_scalar("sin", V, 7)
    np.testing.assert_allclose(S.coefficients[1:8], oracle["sin_coefs_v_third_m1to7"], rtol=1e-14, atol=1e-17)
    assert S.coefficients[1] == pytest.approx(math.exp(-1 / 6), rel=1e-15)


def test_sin_printed_constant_is_the_reciprocal():
    # the first odd coefficient from the Gaussian-integration identity E[sin' Z] = E[cos Z] = e^{-v/2}
    S = from_scalar("sin", V, 1)
    assert S.coefficients[1] * math.exp(1 / 3) == pytest.approx(math.exp(1 / 6), rel=1e-15)


@pytest.mark.parametrize(
    "kind, params, func",
    [
        ("wick_exp", (), lambda x, v: np.exp(x - v / 2)),
        ("exp", (), lambda x, v: np.exp(x)),
        ("sin", (), lambda x, v: np.sin(x)),
        ("cos", (), lambda x, v: np.cos(x)),
        ("polynomial", (1.0, -2.0, 0.0, 0.5), lambda x, v: 1 - 2 * x + 0.5 * x**3),
    ],
)
@pytest.mark.parametrize("v", [V, 1.0, 2.5])
def test_quadrature_round_trip(kind, params, func, v):
    closed = from_scalar(kind, v, 20, params)
    quad = from_quadrature(lambda x: func(x, v), v, 20)
    scale = np.array([math.sqrt(math.factorial(m) * v**m) for m in range(21)])
    np.testing.assert_allclose(quad.coefficients * scale, closed.coefficients * scale, atol=1e-10)


def test_quadrature_path_via_callable():
    S = from_scalar(np.tanh, 0.5, 8)
    assert S.kind == "generic"
    assert S.coefficients[0] == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(ValueError):
        from_scalar(np.tanh, 0.0, 8)


def test_unknown_catalog_entry():
    with pytest.raises(ValueError, match="unknown functional"):
        from_scalar("log", 1.0, 3)
    with pytest.raises(ValueError):
        from_scalar("polynomial", 1.0, 3)


def test_derivatives():
    lin = from_scalar("polynomial", V, 5, [0.0, 1.0])
    np.testing.assert_allclose(derivative(lin).coefficients[:2], [1.0, 0.0])
    for kind in ("wick_exp", "exp"):
        S = from_scalar(kind, 0.8, 15)
        np.testing.assert_allclose(derivative(S).coefficients[:15], S.coefficients[:15], rtol=1e-14)
    s = from_scalar("sin", V, 12)
    c = from_scalar("cos", V, 12)
    np.testing.assert_allclose(derivative(s).coefficients, c.coefficients[:12], rtol=1e-14, atol=1e-18)


def test_eval_series_examples():
    S = from_scalar("wick_exp", 0.6, 60)
    assert eval_series(S, 0.9) == pytest.approx(math.exp(0.9 - 0.3), rel=1e-13)
    assert S.evaluate(0.9) == pytest.approx(math.exp(0.9 - 0.3), rel=1e-15)
    assert eval_series(from_scalar("polynomial", 0.2, 3, [0, 1]), 0.7) == pytest.approx(0.7)
    assert eval_series(from_scalar("exp", V, 30), 0.0) == pytest.approx(1.0, abs=1e-12)


@given(st.floats(-3, 3), st.sampled_from(["exp", "sin", "cos", "wick_exp"]))
def test_closed_form_evaluation_matches_series(y, kind):
    S = from_scalar(kind, 0.5, 70)
    assert S.evaluate(y) == pytest.approx(eval_series(S, y), rel=1e-11, abs=1e-12)


@given(st.floats(0.05, 3.0), st.integers(0, 25))
def test_wick_exp_tail_bound(v, M):
    S = from_scalar("wick_exp", v, M)
    C = 1.0
    bound = (C * C * v) ** (M + 1) / math.factorial(M + 1) * math.exp(C * C * v)
    assert S.truncation_mass() <= bound * (1 + 1e-12)
    assert 0.0 <= S.truncation_mass()


def test_growth_constant():
    assert from_scalar("wick_exp", 1.0, 20).growth_constant == pytest.approx(1.0)
    assert from_scalar("exp", 0.5, 20).growth_constant > 1.0


@pytest.mark.parametrize("kind", ["exp", "sin", "polynomial"])
def test_second_moment_by_monte_carlo(kind):
    v = 0.7
    S = from_scalar(kind, v, 30, (0.5, 1.0, -1.0) if kind == "polynomial" else None)
    z = np.random.default_rng(12).normal(size=200_000) * math.sqrt(v)
    vals = eval_series(S, z) ** 2
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(vals.mean() - S.norm2()) <= 4 * se


def test_apply_to_chaos_linear():
    g = GridSpec(3)
    S = from_scalar("polynomial", 1.0, 4, [0.0, 1.0])
    p = apply_to_chaos(S, [0.5, 1.0, -2.0], g, 4)
    assert p.to_dict() == {(0, 0, 1): -2.0, (0, 1, 0): 1.0, (1, 0, 0): 0.5}


def test_apply_to_chaos_wick_exp(oracle):
    g = GridSpec(1)
    S = from_scalar("wick_exp", 1.0, 30)
    p = apply_to_chaos(S, [1.0], g, 30, prune=0.0)
    assert eval_at(p, [1.2]) == pytest.approx(oracle["wick_exp_eval_n1_w1.2"], rel=1e-13)
    assert eval_at(p, [1.2]) == pytest.approx(math.exp(0.7), rel=1e-13)
    assert expectation(p) == S.coefficients[0]


def test_apply_to_chaos_cap_reports_dropped_mass():
    g = GridSpec(2)
    S = from_scalar("exp", 1.0, 10)
    w = [0.8, 1.1]
    full = apply_to_chaos(S, w, g, 10, prune=0.0)
    cut = apply_to_chaos(S, w, g, 4, prune=0.0)
    assert cut.dropped_mass + norm2(cut) == pytest.approx(norm2(full), rel=1e-13)


def test_exp_quadratic_taylor_matches_direct_expansion():
    lin = np.array([0.3, -0.7])
    quad = np.array([[0.2, 0.5], [0.0, -0.4]])
    T = exp_quadratic_taylor(lin, quad, (5, 4))
    # brute-force: multiply truncated series of each exponential term
    import itertools

    ref = np.zeros((5, 4))
    terms = [((1, 0), lin[0]), ((0, 1), lin[1]), ((2, 0), quad[0, 0]), ((1, 1), quad[0, 1]), ((0, 2), quad[1, 1])]
    for ks in itertools.product(range(5), repeat=len(terms)):
        a = sum(k * e[0] for k, (e, _) in zip(ks, terms))
        b = sum(k * e[1] for k, (e, _) in zip(ks, terms))
        if a < 5 and b < 4:
            ref[a, b] += math.prod(c**k / math.factorial(k) for k, (_, c) in zip(ks, terms))
    np.testing.assert_allclose(T, ref, rtol=1e-13, atol=1e-16)
    batch = exp_quadratic_taylor(np.stack([lin, 2 * lin], axis=1), quad, (5, 4))
    np.testing.assert_allclose(batch[..., 0], T, rtol=1e-15)


def test_linwa_evaluate_matches_chaos():
    g = GridSpec(3)
    f1, f2 = [0.5, 1.0, -0.2], [1.5, -0.3, 0.4]
    A = from_scalar("polynomial", 1.0, 3, [0.2, 1.0, 0.0, 0.3])
    B = from_scalar("polynomial", 1.0, 2, [1.0, -1.0, 0.5])
    chaos = wick_mul(apply_to_chaos(A, f1, g, 6), apply_to_chaos(B, f2, g, 6), 6, prune=0.0)
    a1, a2 = Func1D.constant(1.0, "a1"), Func1D.constant(2.0, "a2")
    L = LinWA.from_terms([(1.0, [(A, a1), (B, a2)])])
    W = np.array([f1, f2])
    gram = g.delta * W @ W.T
    w = np.random.default_rng(2).normal(size=(6, 3)) * math.sqrt(g.delta)
    np.testing.assert_allclose(L.evaluate(W @ w.T, gram), eval_at(chaos, w), rtol=1e-12)


def test_linwa_merges_shared_arguments():
    f = Func1D.from_expr("s")
    S = from_scalar("polynomial", 1.0, 1, [0.0, 1.0])
    L = LinWA.from_terms([(2.0, [(S, f), (S, Func1D.from_expr("s"))])])
    assert L.K == 1
    np.testing.assert_allclose(L.coefs, [0.0, 0.0, 2.0])
    np.testing.assert_allclose(L.partial(0).coefs, [0.0, 4.0])


def test_linwa_moment_reduces_to_tilted_moment():
    A = from_scalar("exp", 0.4, 30)
    B = from_scalar("sin", 0.9, 30)
    fa, fb = Func1D.constant(1.0, "x"), Func1D.constant(1.0, "y")
    got = linwa_moment(LinWA((fa,), A.coefficients), LinWA((fb,), B.coefficients), np.array([[0.3]]), [0.2], [-0.1], 0.25)
    want = tilted_moment(A, B, 0.4, 0.9, 0.3, 0.2, -0.1, 0.25)
    assert got == pytest.approx(want, rel=1e-10)


def test_series_is_immutable():
    S = from_scalar("exp", 1.0, 3)
    with pytest.raises(ValueError):
        S.coefficients[0] = 2.0
    with pytest.raises(ValueError):
        WickSeries([1.0], -1.0)
