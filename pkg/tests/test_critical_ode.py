import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stablebrw.critical_ode import (CorridorFunctions, CriticalParams, G_lambda, G_lambda_direct,
                                    K1_K2, a_alpha, argmin_f, barrier_tradeoff_f, corridor_gain,
                                    decay_K, finite_variance_a_hat, r_a, solve_h)

# (5/3) 3.75^0.4 and the root of x^3 - 2x^2 + 0.5 in (1, 2) (mpmath, 30 digits)
A_15_1 = 2.82788182522632384424758390981
R_CUBIC = 1.85463767971846141961456583356
C_BM = math.pi ** 2 / 2


def test_a_alpha_examples():
    s2 = 2 * math.log(2)
    assert a_alpha(2.0, math.pi ** 2 * s2 / 2) == pytest.approx(finite_variance_a_hat(s2), rel=1e-12)
    for al in (1.2, 1.5, 2.0):
        assert a_alpha(al, 1 / (al * (1 + al))) == pytest.approx(1 + 1 / al, rel=1e-14)
    assert a_alpha(1.5, 1.0) == pytest.approx(A_15_1, rel=1e-14)
    with pytest.raises(ValueError):
        a_alpha(1.5, -1.0)
    with pytest.raises(ValueError):
        CriticalParams(1.5, 1.0, 0.0)


def test_f_and_argmin():
    assert argmin_f(2.0, 1 / 6) == pytest.approx(1.0, rel=1e-14)
    assert barrier_tradeoff_f(1.0, 2.0, 1 / 6) == pytest.approx(1.5, rel=1e-14)
    with pytest.raises(ValueError):
        barrier_tradeoff_f(0.0, 2.0, 1.0)


@settings(max_examples=50, deadline=None)
@given(alpha=st.floats(1.01, 2.0), cstar=st.floats(0.01, 50.0))
def test_f_min_is_a_alpha(alpha, cstar):
    x = argmin_f(alpha, cstar)
    assert barrier_tradeoff_f(x, alpha, cstar) == pytest.approx(a_alpha(alpha, cstar), rel=1e-12)
    assert barrier_tradeoff_f(1.01 * x, alpha, cstar) > barrier_tradeoff_f(x, alpha, cstar)


@settings(max_examples=50, deadline=None)
@given(alpha=st.floats(1.01, 2.0), x=st.floats(0.05, 20), y=st.floats(0.05, 20))
def test_f_strictly_convex(alpha, x, y):
    if abs(x - y) < 1e-3:
        return
    m = barrier_tradeoff_f(0.5 * (x + y), alpha, 1.0)
    assert m < 0.5 * (barrier_tradeoff_f(x, alpha, 1.0) + barrier_tradeoff_f(y, alpha, 1.0))


def test_r_a_examples():
    r = r_a(2.0, 2.0, 1 / 6)
    assert r == pytest.approx(R_CUBIC, rel=1e-12)
    assert abs(barrier_tradeoff_f(r, 2.0, 1 / 6) - 2.0) < 1e-10
    with pytest.raises(ValueError):
        r_a(1.5, 2.0, 1 / 6)
    # tangency limit
    crit = a_alpha(1.5, 1.0)
    assert r_a(crit * (1 + 1e-10), 1.5, 1.0) == pytest.approx(argmin_f(1.5, 1.0), rel=1e-4)


def test_r_a_increasing():
    crit = a_alpha(1.5, 2.0)
    vals = [r_a(crit * f, 1.5, 2.0) for f in (1.01, 1.1, 1.5, 2.0, 4.0)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    assert all(v > argmin_f(1.5, 2.0) for v in vals)


@pytest.mark.parametrize("alpha", [1.2, 1.5, 2.0])
def test_solve_h_a_zero_closed_form(alpha):
    sol = solve_h(0.0, alpha, C_BM)
    tm = 1 / ((1 + alpha) * C_BM)
    assert sol.t_max == pytest.approx(tm, abs=1e-6 * tm)
    t = np.linspace(0, 0.95 * tm, 50)
    exact = (1 - (1 + alpha) * C_BM * t) ** (1 / (1 + alpha))
    assert np.max(np.abs(sol.h(t) - exact)) < 1e-6
    assert sol.K == pytest.approx(((1 + alpha) * C_BM) ** (1 / (1 + alpha)), rel=1e-6)


def test_conservation_residual():
    sol = solve_h(3.0, 2.0, C_BM)
    assert sol.blew_down
    assert sol.conserved_residual < 1e-8


def test_t_max_and_K_monotone():
    crit = a_alpha(2.0, C_BM)
    sols = [solve_h(f * crit, 2.0, C_BM) for f in (0.0, 0.5, 0.9)]
    assert sols[0].t_max < sols[1].t_max < sols[2].t_max
    assert sols[0].K > sols[1].K > sols[2].K > 0


def test_no_blow_down_above_critical():
    crit = a_alpha(1.5, 1.0)
    sol = solve_h(1.2 * crit, 1.5, 1.0, t_budget=1e4)
    assert not sol.blew_down and math.isinf(sol.t_max)
    with pytest.raises(ValueError):
        decay_K(1.2 * crit, 1.5, 1.0)
    with pytest.raises(ValueError):
        solve_h(1.0, 1.5, 1.0, h0=0.0)


def test_decay_K_continuity_at_zero():
    k0 = decay_K(0.0, 1.5, 1.0)
    diffs = [abs(decay_K(e, 1.5, 1.0) - k0) for e in (1e-1, 1e-2, 1e-3)]
    assert diffs[0] > diffs[1] > diffs[2]
    assert diffs[2] < 1e-2


def test_decay_K_approaches_zero():
    crit = a_alpha(1.5, 1.0)
    ks = [decay_K(f * crit, 1.5, 1.0) for f in (0.5, 0.7, 0.8, 0.85)]
    assert all(b < a for a, b in zip(ks, ks[1:]))
    assert ks[-1] < 0.1 * ks[0]


def test_K1_K2_on_rescaled_solution():
    crit = a_alpha(2.0, C_BM)
    a = 0.5 * crit
    sol = solve_h(a, 2.0, C_BM)
    k1, k2 = K1_K2(sol.rescaled(), a, 2.0, C_BM, n_grid=200)
    assert k2 <= k1 + 1e-6
    assert k2 == pytest.approx(sol.K, rel=1e-6)


def test_K1_K2_constant_h():
    k1, k2 = K1_K2(lambda t: np.ones_like(np.asarray(t, dtype=float)), 0.0, 1.5, 2.0, n_grid=100)
    assert k1 == pytest.approx(2.0, rel=1e-12)
    assert k2 == pytest.approx(1.0, rel=1e-12)


def test_K1_K2_rejects_vanishing_h():
    with pytest.raises(ValueError, match="rescaled"):
        K1_K2(lambda t: 0.5 - np.asarray(t, dtype=float), 0.0, 1.5, 1.0, n_grid=50)


def test_K2_objective_constant_along_exact_solution():
    sol = solve_h(1.0, 1.5, 1.0)
    h = sol.rescaled()
    # objective at a few rho values equals h_eps(0)
    from scipy import integrate
    for rho in (0.1, 0.5, 0.9):
        integral = integrate.quad(lambda t: float(h(np.array([t]))[0]) ** -1.5, 0, rho,
                                  epsabs=1e-12, epsrel=1e-11, limit=200)[0]
        val = -1.0 * rho ** 0.4 + float(h(np.array([rho]))[0]) + integral
        assert val == pytest.approx(sol.K, rel=1e-6)


def test_corridor_functions():
    cf = CorridorFunctions(math.log(4), 3.0, 1.0, 1.5)
    t = np.linspace(0, 1, 101)
    assert np.all(np.diff(cf.f(t)) > 0)
    assert cf.f(1.0) == pytest.approx(4 ** (1 / 2.5) * cf.f(0.0), rel=1e-12)
    assert np.all(cf.g1(t[1:]) < cf.g2(t[1:]))


@settings(max_examples=60, deadline=None)
@given(rho=st.floats(0, 1), alpha=st.floats(1.05, 2.0), cstar=st.floats(0.1, 10.0),
       afac=st.floats(0.5, 4.0), bfrac=st.floats(0.05, 0.95), lam=st.integers(2, 200))
def test_G_lambda_forms_agree(rho, alpha, cstar, afac, bfrac, lam):
    a = afac * a_alpha(alpha, cstar)
    b = bfrac * a
    red = G_lambda(rho, a, b, math.log(lam), alpha, cstar)
    direct = G_lambda_direct(rho, a, b, math.log(lam), alpha, cstar)
    assert red == pytest.approx(direct, abs=1e-8 * max(1.0, abs(direct)))


def test_G_lambda_sign_structure():
    alpha, cstar = 1.5, 1.0
    a = 1.5 * a_alpha(alpha, cstar)
    b = argmin_f(alpha, cstar)
    assert b + (1 + alpha) * cstar / b ** alpha < a
    lam = math.log(200)
    rho = np.linspace(0, 1, 1001)
    g = G_lambda(rho, a, b, lam, alpha, cstar)
    assert np.argmax(g) == 0 and g[0] < 0
    gain = corridor_gain(a, b, lam, alpha, cstar)
    cf = CorridorFunctions(lam, a, b, alpha)
    closed = (cf.f(1.0) - cf.f(0.0)) * (a - (1 + alpha) * cstar / b ** alpha)
    assert gain == pytest.approx(closed, rel=1e-10) and gain > 0
