import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wickapprox import _pykernels
from wickapprox.chaos import (
    Caps,
    ChaosPoly,
    eval_at,
    expectation,
    gamma,
    hermite_eval,
    inner_product,
    norm2,
    ordinary_mul,
    project_level,
    s_transform,
    wick_exp,
    wick_mul,
    wick_power_linear,
)
from wickapprox.fnspace import GridSpec

try:
    from wickapprox import _ckernels
except ImportError:  # pragma: no cover
    _ckernels = None


def poly(n, terms, cap=12):
    return ChaosPoly.from_dict(GridSpec(n), terms, cap)


def random_poly(rng, n, max_deg, k, cap=12):
    terms = {}
    for _ in range(k):
        alpha = [0] * n
        for _ in range(rng.integers(0, max_deg + 1)):
            alpha[rng.integers(n)] += 1
        terms[tuple(alpha)] = float(rng.normal())
    return poly(n, terms, cap)


sparse_polys = st.builds(
    lambda seed, n, deg, k: random_poly(np.random.default_rng(seed), n, deg, k),
    st.integers(0, 2**32 - 1),
    st.integers(1, 3),
    st.integers(0, 3),
    st.integers(1, 5),
)


def test_hermite_examples(oracle):
    assert hermite_eval(2, 0.5, 1.0) == pytest.approx(0.5)
    assert hermite_eval(0, 3.0, -7.0) == 1.0
    assert hermite_eval(3, 1.0, 2.0) == oracle["hermite_3_1_at_2"]


def test_invariants_of_storage():
    p = poly(3, {(1, 0, 0): 2.0, (0, 0, 0): 0.5, (0, 2, 1): -1.0, (1, 1, 1): 0.0}, cap=3)
    assert (0, 0, 0) in p.to_dict() and (1, 1, 1) not in p.to_dict()
    assert expectation(p) == 0.5
    assert all(sum(a) <= p.degree_cap for a in p.to_dict())
    keys = list(p.to_dict())
    assert keys == sorted(keys)


def test_monomial_norm():
    g = GridSpec(3)
    m = ChaosPoly.monomial(g, (2, 0, 3))
    assert norm2(m) == pytest.approx(math.factorial(2) * math.factorial(3) * g.delta**5, rel=1e-15)
    other = ChaosPoly.monomial(g, (1, 0, 3))
    assert inner_product(m, other) == 0.0


def test_wick_mul_examples():
    g = GridSpec(2)
    e0 = ChaosPoly.monomial(g, (1, 0))
    e1 = ChaosPoly.monomial(g, (0, 1))
    assert wick_mul(e0, e0).to_dict() == {(2, 0): 1.0}
    a = poly(2, {(0, 0): 0.3, (1, 2): -1.5})
    assert wick_mul(a, ChaosPoly.constant(g)).to_dict() == a.to_dict()
    m11 = wick_mul(e0, e1)
    assert m11.to_dict() == {(1, 1): 1.0}
    assert norm2(m11) == pytest.approx(g.delta**2)


def test_wick_mul_cap_accounts_dropped_mass():
    g = GridSpec(2)
    a = poly(2, {(0, 0): 1.0, (1, 0): 1.0, (0, 1): 2.0}, cap=4)
    full = wick_mul(a, wick_mul(a, a, 4), 4)
    cut = wick_mul(a, wick_mul(a, a, 4), 2)
    assert cut.dropped_mass == pytest.approx(norm2(project_level(full, 3)), rel=1e-12)


def test_ordinary_mul_examples():
    g = GridSpec(1)
    h1 = ChaosPoly.monomial(g, (1,), cap=4)
    assert ordinary_mul(h1, h1).to_dict() == pytest.approx({(2,): 1.0, (0,): g.delta})
    h2 = ChaosPoly.monomial(g, (2,), cap=4)
    assert ordinary_mul(h2, h1).to_dict() == pytest.approx({(3,): 1.0, (1,): 2.0})


@given(st.integers(0, 2**32 - 1))
def test_ordinary_equals_wick_on_disjoint_variables(seed):
    rng = np.random.default_rng(seed)
    g = GridSpec(4)
    a = poly(4, {(i, j, 0, 0): rng.normal() for i in range(3) for j in range(2)})
    b = poly(4, {(0, 0, i, j): rng.normal() for i in range(2) for j in range(3)})
    assert ordinary_mul(a, b, prune=0.0).to_dict() == wick_mul(a, b, prune=0.0).to_dict()


@given(sparse_polys, sparse_polys, st.integers(0, 2**32 - 1))
def test_evaluation_homomorphism(a, b, seed):
    if a.n != b.n:
        b = ChaosPoly.constant(a.grid, 0.7)
    prod = ordinary_mul(a, b, cap=12, prune=0.0)
    assert prod.dropped_mass == 0.0
    w = np.random.default_rng(seed).normal(size=(5, a.n)) * math.sqrt(a.grid.delta)
    np.testing.assert_allclose(eval_at(prod, w), eval_at(a, w) * eval_at(b, w), rtol=1e-10, atol=1e-10)


def test_wick_power_examples():
    g = GridSpec(2)
    assert wick_power_linear([0.3, 0.4], g, 0).to_dict() == {(0, 0): 1.0}
    assert wick_power_linear([0.3, 0.4], g, 1).to_dict() == {(0, 1): 0.4, (1, 0): 0.3}
    sq = wick_power_linear([1.0, 1.0], g, 2)
    assert sq.to_dict() == {(0, 2): 1.0, (1, 1): 2.0, (2, 0): 1.0}
    assert norm2(sq) == pytest.approx(2.0)


@given(st.lists(st.floats(-2, 2), min_size=1, max_size=4), st.integers(0, 6))
def test_wick_power_paths_agree(w, m):
    g = GridSpec(len(w))
    a = wick_power_linear(w, g, m, "multinomial", cap=6).to_dict()
    b = wick_power_linear(w, g, m, "recursion", cap=6).to_dict()
    for k in set(a) | set(b):
        assert abs(a.get(k, 0.0) - b.get(k, 0.0)) <= 1e-12 * max(1.0, abs(a.get(k, 0.0)))


def test_wick_exp():
    g = GridSpec(1)
    assert wick_exp(ChaosPoly.zero(g, 5)).to_dict() == {(0,): 1.0}
    lin = ChaosPoly.linear(g, [1.0], 15)
    e = wick_exp(lin)
    assert expectation(e) == 1.0
    assert norm2(e) == pytest.approx(sum(1 / math.factorial(m) for m in range(16)), rel=1e-15)
    with pytest.warns(UserWarning):
        wick_exp(lin + ChaosPoly.constant(g, 1.0, 15))


def test_eval_at_examples():
    g = GridSpec(4)
    h2 = ChaosPoly.monomial(GridSpec(4), (2, 0, 0, 0))
    assert eval_at(h2, [0.3, 0, 0, 0]) == pytest.approx(-0.16)
    assert eval_at(ChaosPoly.constant(g), [1, 2, 3, 4]) == 1.0
    m11 = ChaosPoly.monomial(GridSpec(2), (1, 1))
    assert eval_at(m11, [0.2, -0.5]) == pytest.approx(-0.1)


def test_inner_product_examples():
    g = GridSpec(2)
    sq = ChaosPoly.monomial(g, (2, 0))
    assert inner_product(sq, sq) == pytest.approx(0.5)
    a = poly(2, {(0, 0): 0.4, (1, 1): 2.0})
    assert inner_product(a, ChaosPoly.constant(g)) == expectation(a)


def test_gamma_and_levels():
    g = GridSpec(2)
    a = poly(2, {(0, 0): 1.0, (1, 0): 2.0, (1, 1): -1.0})
    assert gamma(a, 1.0).to_dict() == a.to_dict()
    assert gamma(ChaosPoly.constant(g), 3.0).to_dict() == {(0, 0): 1.0}
    assert project_level(a, 1).to_dict() == {(1, 0): 2.0}
    e = wick_exp(ChaosPoly.linear(GridSpec(1), [1.0], 40), prune=0.0)
    assert norm2(gamma(e, math.sqrt(2))) == pytest.approx(math.e**2, rel=1e-13)


def test_s_transform():
    g = GridSpec(2)
    assert s_transform(ChaosPoly.monomial(g, (1, 0)), [0.5, 0.5]) == 0.5
    assert s_transform(ChaosPoly.constant(g), [3.0, -2.0]) == 1.0


@given(sparse_polys, sparse_polys, st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_s_transform_is_multiplicative(a, b, t):
    if a.n != b.n:
        b = ChaosPoly.constant(a.grid, 1.3)
    t = t[: a.n]
    lhs = s_transform(wick_mul(a, b, cap=12, prune=0.0), t)
    assert lhs == pytest.approx(s_transform(a, t) * s_transform(b, t), rel=1e-10, abs=1e-12)


def _wick_sum(left, right, delta):
    if len(left) != len(right):
        return 0.0
    total = 0.0
    for perm in itertools.permutations(range(len(right))):
        total += math.prod(delta * float(np.dot(left[i], right[j])) for i, j in enumerate(perm))
    return total


def test_wick_theorem_against_permutation_sum():
    rng = np.random.default_rng(11)
    for _ in range(200):
        n = int(rng.integers(1, 4))
        g = GridSpec(n)
        p, q = int(rng.integers(0, 5)), int(rng.integers(0, 5))
        left = [rng.normal(size=n) for _ in range(p)]
        right = [rng.normal(size=n) for _ in range(q)]

        def product(ws):
            out = ChaosPoly.constant(g, 1.0, 8)
            for w in ws:
                out = wick_mul(out, ChaosPoly.linear(g, w, 8), 8, prune=0.0)
            return out

        value = inner_product(product(left), product(right))
        assert abs(value - _wick_sum(left, right, g.delta)) <= 1e-12 * max(1.0, abs(value))


@given(sparse_polys, sparse_polys)
def test_mehler_bound_for_wick_products(a, b):
    if a.n != b.n:
        b = ChaosPoly.constant(a.grid, -0.4)
    lhs = norm2(wick_mul(a, b, cap=12, prune=0.0))
    rhs = norm2(gamma(a, math.sqrt(2))) * norm2(gamma(b, math.sqrt(2)))
    assert lhs <= rhs * (1 + 1e-12) + 1e-15


def test_monte_carlo_mean_matches_expectation():
    rng = np.random.default_rng(5)
    for trial in range(3):
        a = random_poly(rng, 3, 4, 6)
        w = np.random.default_rng(100 + trial).normal(size=(100_000, 3)) * math.sqrt(a.grid.delta)
        vals = eval_at(a, w)
        se = vals.std(ddof=1) / math.sqrt(vals.size)
        assert abs(vals.mean() - expectation(a)) <= 4 * se


def test_text_listing():
    p = poly(2, {(1, 0): 0.5, (0, 0): -1.0})
    assert p.to_text().splitlines() == ["0,0 : -1.0", "1,0 : 0.5"]


def test_caps_defaults():
    assert Caps().degree_for(GridSpec(5)) == 5
    assert Caps().degree_for(GridSpec(40)) == 12
    assert Caps(degree=3).degree_for(GridSpec(40)) == 3


@pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")
def test_compiled_and_numpy_kernels_agree():
    rng = np.random.default_rng(9)
    a = random_poly(rng, 5, 6, 200)
    from wickapprox.chaos import _prefix_plan

    start, end = _prefix_plan(a.exps)
    w = rng.normal(size=(37, 5)) * 0.4
    args = (np.ascontiguousarray(a.exps), np.ascontiguousarray(a.coefs), start, end, w, a.grid.delta, int(a.exps.max()))
    np.testing.assert_array_equal(_pykernels.eval_batch(*args), _ckernels.eval_batch(*args))
    np.testing.assert_array_equal(_pykernels.hermite_table(w.T.copy(), 0.2, 7), _ckernels.hermite_table(w.T.copy(), 0.2, 7))
    deg = a.degrees.astype(np.int64)
    srt = np.sort(deg, kind="stable")
    for above in (False, True):
        for x, y in zip(_pykernels.degree_pairs(deg, srt, 6, above), _ckernels.degree_pairs(deg, srt, 6, above)):
            np.testing.assert_array_equal(x, y)
