"""Regenerate frozen reference values with sympy/mpmath.

These derivations do not import the package. Run as a script to rewrite
frozen.json next to this file.
"""
import json
from pathlib import Path

import mpmath as mp
import sympy as sp

mp.mp.dps = 40
s, t, x = sp.symbols("s t x", real=True)


def l2(u, w):
    return sp.integrate(u * w, (s, 0, 1))


def cell_means(u, n):
    return [n * sp.integrate(u, (s, sp.Rational(k, n), sp.Rational(k + 1, n))) for k in range(n)]


def gauss_expect(expr, var, variance):
    dens = sp.exp(-var**2 / (2 * variance)) / sp.sqrt(2 * sp.pi * variance)
    return sp.simplify(sp.integrate(expr * dens, (var, -sp.oo, sp.oo)))


def hermite(k, alpha, y):
    h0, h1 = sp.Integer(1), y
    if k == 0:
        return h0
    for m in range(1, k):
        h0, h1 = h1, sp.expand(y * h1 - m * alpha * h0)
    return h1


out = {}

# fnspace
out["cell_average_s2_k0_n2"] = float(cell_means(s**2, 2)[0])
pf = cell_means(s, 2)
out["residual_gram_s_s_n2"] = float(l2(s, s) - sum(v**2 for v in pf) / 2)
out["norm2_one_minus_s2"] = float(l2(1 - s**2, 1 - s**2))
out["inner_fprime_gprime_s2_exp"] = float(l2(2 * s, sp.exp(s)))

# chaos
out["hermite_3_1_at_2"] = float(hermite(3, 1, sp.Integer(2)))
out["wick_exp_eval_n1_w1.2"] = float(sp.exp(sp.Rational(7, 10)))

# functional: sin coefficients at v = 1/3 through E[F h^m]/(m! v^m)
v = sp.Rational(1, 3)
sin_coefs = []
for m in range(1, 8):
    num = gauss_expect(sp.sin(x) * hermite(m, v, x), x, v)
    sin_coefs.append(float(sp.N(num / (sp.factorial(m) * v**m), 30)))
out["sin_coefs_v_third_m1to7"] = sin_coefs
out["sin_coef_printed_c1"] = float(sp.exp(sp.Rational(1, 6)))

# solution
out["exact_terminal_first_chaos_example"] = float(sp.Rational(3, 10) * sp.exp(sp.Rational(-1, 20)))
out["closed_constant_f_s"] = float(sp.exp(sp.Rational(1, 6)) / sp.sqrt(12))
f, sig, a = 1 - s, s * (1 - s), s**2
h = f + sig
c_full = sp.sqrt(l2(sp.diff(h, s), sp.diff(h, s))) * sp.exp(l2(h, h) / 2 + sp.integrate(a, (s, 0, 1))) / sp.sqrt(12)
out["closed_constant_full"] = float(sp.N(c_full, 30))
pp = cell_means(s, 2)
out["mse_optimal_wick_exp_f_s_n2"] = float(sp.N(sp.exp(sp.Rational(1, 3)) - sp.exp(sum(q**2 for q in pp) / 2), 30))

# F = exp: 12 C^2 of the optimal constant, by direct Gaussian integration.
# A_s = (f' + sigma') F, E[(F(I f) <> e(I sigma))^2] = e^{|sigma|^2} E[exp(2(Z + <f,sigma>))], Z ~ N(0,|f|^2)
vf, vs, fs = l2(f, f), l2(sig, sig), l2(f, sig)
z = sp.symbols("z", real=True)
m22 = sp.exp(vs) * gauss_expect(sp.exp(2 * (z + fs)), z, vf)
dd = l2(sp.diff(f, s) + sp.diff(sig, s), sp.diff(f, s) + sp.diff(sig, s))
twelve_c2 = sp.exp(2 * sp.integrate(a, (s, 0, 1))) * dd * m22
out["exp_12C2_optimal"] = float(sp.N(twelve_c2, 30))
out["exp_12C2_gaussian_closed"] = float(sp.N(sp.Rational(4, 3) * sp.exp(1 + sp.Rational(8, 15)), 30))
out["exp_12C2_printed"] = float(sp.N((sp.exp(sp.Rational(1, 6)) + sp.exp(sp.Rational(1, 2))) * sp.exp(sp.Rational(8, 15)), 30))

# initial-value rate target for F = wick_exp, f = s: |f'|^2 E[F'^2]/12 = e^{1/3}/12
out["initial_rate_wick_exp_f_s"] = float(sp.N(sp.exp(sp.Rational(1, 3)) / 12, 30))

# Milstein counterexample: E[x_n] = prod_k (1 + F_k + F_k^2/2), F_k = int_cell (1-s)
def milstein_mean(n):
    acc = mp.mpf(1)
    for k in range(n):
        lo, hi = mp.mpf(k) / n, mp.mpf(k + 1) / n
        fk = (hi - lo) - (hi**2 - lo**2) / 2
        acc *= 1 + fk + fk**2 / 2
    return float(acc)

out["milstein_mean_n256"] = milstein_mean(256)
out["milstein_mean_limit"] = float(mp.e ** mp.mpf("0.5"))

# Multivariate check data: X0 = I(s) <> I(e^s), sigma = s(1-s), a = s^2.
# C^2 = e^{2 int a}/12 int E[(Y_s <> e(I sigma))^2] ds, evaluated by Isserlis moments after the shift.
f1, f2 = s, sp.exp(s)
G = sp.Matrix([[l2(f1, f1), l2(f1, f2)], [l2(f1, f2), l2(f2, f2)]])
mu = [l2(f1, sig), l2(f2, sig)]
z1, z2 = sp.symbols("z1 z2", real=True)
X1, X2 = z1 + mu[0], z2 + mu[1]
p1, p2, q = sp.symbols("p1 p2 q", real=True)  # f1'(s), f2'(s), sigma'(s)
Y = p1 * X2 + p2 * X1 + q * (X1 * X2 - G[0, 1])
poly = sp.Poly(sp.expand(Y**2), z1, z2)


def gmoment(i, j):
    # E[Z1^i Z2^j] for centered Gaussian with covariance G, via Isserlis generating function
    tt1, tt2 = sp.symbols("tt1 tt2")
    mgf = sp.exp((G[0, 0] * tt1**2 + 2 * G[0, 1] * tt1 * tt2 + G[1, 1] * tt2**2) / 2)
    return sp.diff(mgf, tt1, i, tt2, j).subs({tt1: 0, tt2: 0})


ey2 = sum(coef * gmoment(i, j) for (i, j), coef in poly.terms())
ey2 = sp.expand(ey2)
subs_int = {}
integrand = ey2.subs({p1: sp.diff(f1, s), p2: sp.diff(f2, s), q: sp.diff(sig, s)})
c2_multi = sp.exp(2 * sp.integrate(a, (s, 0, 1))) * sp.exp(vs) * sp.integrate(integrand, (s, 0, 1)) / 12
out["multivariate_product_constant"] = float(sp.N(sp.sqrt(c2_multi), 30))

Path(__file__).with_name("frozen.json").write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
print(json.dumps(out, indent=2, sort_keys=True))
