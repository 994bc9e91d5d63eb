import math

import numpy as np
import pytest
from scipy import stats

from stablebrw.branching import (LOG2, BarrierSpec, _evolve, bn_experiment, campbell_check,
                                 critical_a_search, default_right_cut, galton_watson_survival,
                                 linear_barrier_check, make_binary_gaussian_model,
                                 make_poisson_boundary_model, many_to_one_check,
                                 paley_zygmund_check, simulate_survival, survival_curve,
                                 survival_prob, two_barrier_counts)
from stablebrw.critical_ode import a_alpha, r_a
from stablebrw.spine_law import make_pareto_spine
from stablebrw.streams import root_keys

C_BIN = math.pi ** 2 * LOG2
# int_{-inf}^{L} e^v P(X in dv) for the spine (1.5, 0.016, 0.1) (mpmath quadrature)
LAMBDA_1 = 1.00119891204965900532820475944
LAMBDA_3 = 1.07317231345454329709718734163


@pytest.fixture(scope="module")
def pmodel():
    return make_poisson_boundary_model(make_pareto_spine(1.5, 0.016, 0.1), 8.0)


@pytest.fixture(scope="module")
def bmodel():
    return make_binary_gaussian_model()


def test_poisson_defect_closed_form():
    m = make_poisson_boundary_model(make_pareto_spine(1.5, 1.0, 2.0), 100.0)
    assert m.defect[0] == pytest.approx(1e-3, rel=1e-12)
    with pytest.raises(ValueError, match="budget"):
        make_poisson_boundary_model(make_pareto_spine(1.5, 1.0, 2.0), 50.0)
    spine = make_pareto_spine(1.2, 0.05, 0.3)
    assert spine.tail_const * default_right_cut(spine) ** -1.2 <= 1e-3


def test_poisson_intensity_mass(pmodel):
    assert pmodel.intensity_mass(1.0) == pytest.approx(LAMBDA_1, rel=1e-6)
    assert pmodel.intensity_mass(3.0) == pytest.approx(LAMBDA_3, rel=1e-6)
    assert pmodel.intensity_mass(-40.0) < 1e-15


def test_campbell_monte_carlo(pmodel):
    est = campbell_check(pmodel, 100_000, np.random.default_rng(1))
    assert abs(est.value - (1 - pmodel.defect[0])) < 3 * est.std_error


def test_brood_size_below_level(pmodel):
    rng = np.random.default_rng(2)
    sizes = [pmodel.sample_brood(0.0, 1.0, rng).size for _ in range(20_000)]
    assert np.mean(sizes) == pytest.approx(LAMBDA_1, abs=4 * math.sqrt(LAMBDA_1 / 20_000))
    # the brood is Poisson: variance equals mean
    assert np.var(sizes) == pytest.approx(LAMBDA_1, rel=0.06)


def test_brood_positions_follow_intensity(pmodel):
    rng = np.random.default_rng(3)
    pos = np.concatenate([pmodel.sample_brood(0.0, 3.0, rng) for _ in range(20_000)])
    assert np.all(pos <= 3.0)
    # normalised restricted intensity CDF at 0
    frac = pmodel.intensity_mass(0.0) / pmodel.intensity_mass(3.0)
    assert np.mean(pos <= 0.0) == pytest.approx(frac, abs=4 * math.sqrt(frac * (1 - frac) / pos.size))


def test_brood_empty_far_below(pmodel, bmodel):
    rng = np.random.default_rng(4)
    assert all(pmodel.sample_brood(0.0, -1e3, rng).size == 0 for _ in range(100))
    assert all(bmodel.sample_brood(0.0, -1e3, rng).size == 0 for _ in range(100))


def test_cap_one():
    m = make_poisson_boundary_model(make_pareto_spine(1.5, 0.016, 0.1), 8.0, cap=1)
    rng = np.random.default_rng(5)
    sizes = {m.sample_brood(0.0, 5.0, rng).size for _ in range(2000)}
    assert sizes <= {0, 1}


def test_broods_nested_across_levels(pmodel):
    keys = root_keys(np.random.default_rng(6), 500)
    pos = np.zeros(500)
    lo = pmodel.children(pos, keys, np.full(500, 0.5))
    hi = pmodel.children(pos, keys, np.full(500, 2.0))
    assert set(lo[2].tolist()) <= set(hi[2].tolist())


def test_binary_boundary_algebra(bmodel):
    m, s2 = bmodel.m, bmodel.s2
    # 2 E e^{-V} and 2 E V e^{-V} for V ~ N(m, s2)
    assert 2 * math.exp(-m + s2 / 2) == pytest.approx(1.0, rel=1e-15)
    assert 2 * (m - s2) * math.exp(-m + s2 / 2) == 0.0
    assert bmodel.sigma2 == pytest.approx(2 * math.log(2))


def test_binary_spine_variance_monte_carlo(bmodel):
    keys = root_keys(np.random.default_rng(7), 200_000)
    idx, disp, _, _ = bmodel.children(np.zeros(keys.size), keys, np.full(keys.size, np.inf))
    w = np.exp(-disp)
    per = np.bincount(idx, weights=disp ** 2 * w, minlength=keys.size)
    assert per.mean() == pytest.approx(2 * LOG2, abs=4 * per.std() / math.sqrt(per.size))
    ones = np.bincount(idx, weights=w, minlength=keys.size)
    assert ones.mean() == pytest.approx(1.0, abs=4 * ones.std() / math.sqrt(ones.size))


def test_immediate_extinction(bmodel):
    est = survival_prob(bmodel, BarrierSpec(linear_eps=-1e3), 5, 500, np.random.default_rng(8))
    assert est.value == 0.0


def test_survival_nonincreasing_in_n(bmodel):
    run = simulate_survival(bmodel, BarrierSpec(0.8 * a_alpha(2.0, C_BIN)), 400, 400,
                            np.random.default_rng(9), max_pop=500)
    s = [run.survived(n).mean() for n in (10, 50, 100, 200, 400)]
    assert all(b <= a for a, b in zip(s, s[1:]))


def test_crn_monotone_in_a_pathwise(pmodel, bmodel):
    for model, alpha in ((bmodel, 2.0), (pmodel, 1.5)):
        keys = root_keys(np.random.default_rng(10), 300)
        prev = None
        for a in (0.5, 1.0, 2.0, 3.0, 5.0):
            run = simulate_survival(model, BarrierSpec.for_alpha(a, alpha), 200, 300, None,
                                    max_pop=300, keys=keys)
            flags = run.survived()
            if prev is not None:
                assert np.all(flags >= prev)
            prev = flags


def test_absorption_soundness(pmodel, bmodel):
    for model in (pmodel, bmodel):
        keys = root_keys(np.random.default_rng(11), 64)
        barrier = BarrierSpec.for_alpha(3.0, model.alpha, b=2.5)
        _evolve(model, barrier, keys, np.full(64, 3.0 * 4 ** (1 / (1 + model.alpha))), 4, 60,
                max_pop=2000, check=True)
        _evolve(model, BarrierSpec.for_alpha(3.0, model.alpha), keys, np.zeros(64), 0, 60,
                max_pop=2000, check=True)


def test_survival_bias_report(bmodel):
    est = survival_prob(bmodel, BarrierSpec(0.9 * a_alpha(2.0, C_BIN)), 300, 300,
                        np.random.default_rng(12), max_pop=200, aux_trials=20)
    assert 0 <= est.extra["bias_estimate"] <= est.value
    sub = survival_prob(bmodel, BarrierSpec(0.9 * a_alpha(2.0, C_BIN)), 300, 300,
                        np.random.default_rng(12), max_pop=200, mode="subsample")
    # thinning can only lose trees relative to declaring survival
    assert sub.value <= est.value


def test_workers_do_not_change_results(bmodel):
    b = BarrierSpec(0.8 * a_alpha(2.0, C_BIN))
    one = survival_prob(bmodel, b, 200, 600, np.random.default_rng(13), max_pop=300)
    two = survival_prob(bmodel, b, 200, 600, np.random.default_rng(13), max_pop=300, workers=2)
    assert one.value == two.value


def test_survival_curve_monotone(bmodel):
    aa = a_alpha(2.0, C_BIN)
    curve = survival_curve(bmodel, [f * aa for f in (0.3, 0.6, 0.9, 1.2)], 300, 300,
                           np.random.default_rng(14), max_pop=300)
    assert np.all(np.diff(curve.values) >= 0)
    assert len(curve.rows()) == 4


def test_critical_a_search_contract(bmodel):
    aa = a_alpha(2.0, C_BIN)
    ce = critical_a_search(bmodel, 2000, 400, (0.3 * aa, 2.0 * aa), 0.5,
                           np.random.default_rng(15), tol=0.01 * aa, max_pop=1000)
    assert 0.3 * aa <= ce.a_cross <= 2.0 * aa
    assert all(b <= a for a, b in zip(ce.widths, ce.widths[1:]))
    # finite-n proxy: within 35% of the critical coefficient
    assert abs(ce.a_cross / aa - 1) < 0.35
    with pytest.raises(ValueError, match="straddle"):
        critical_a_search(bmodel, 100, 100, (1.5 * aa, 2.0 * aa), 0.5, np.random.default_rng(1))


def test_two_barrier_counts(bmodel):
    aa = a_alpha(2.0, C_BIN)
    a = 1.2 * aa
    b = r_a(a, 2.0, C_BIN)
    keys = root_keys(np.random.default_rng(16), 4000)
    z = two_barrier_counts(bmodel, a, b, math.log(4), 1, 4000, None, keys=keys)
    assert z.mean() >= 1.0
    zc = two_barrier_counts(bmodel, a, b, math.log(4), 1, 4000, None, cap=1, keys=keys)
    assert np.all(zc <= z) and zc.sum() == 0
    z2 = two_barrier_counts(bmodel, a, b, math.log(4), 1, 4000, None, cap=2, keys=keys)
    assert np.array_equal(z2, z)


def test_two_barrier_cap_ordering_poisson(pmodel):
    keys = root_keys(np.random.default_rng(17), 500)
    a = 2.0 * a_alpha(1.5, 0.28)
    free = two_barrier_counts(pmodel, a, 0.8 * a, math.log(2), 2, 500, None, keys=keys)
    capped = two_barrier_counts(pmodel, a, 0.8 * a, math.log(2), 2, 500, None, cap=2, keys=keys)
    assert np.all(capped <= free)


def test_two_barrier_degenerate_corridor(bmodel):
    z = two_barrier_counts(bmodel, 5.0, 1e-9, math.log(4), 1, 200, np.random.default_rng(18))
    assert z.sum() == 0


def test_two_barrier_overflow_guard(bmodel):
    with pytest.raises(OverflowError):
        two_barrier_counts(bmodel, 5.0, 2.0, math.log(4), 9, 1, np.random.default_rng(1),
                           max_generation=10_000)
    with pytest.raises(ValueError):
        two_barrier_counts(bmodel, 5.0, 2.0, 1.0, 1, 1, np.random.default_rng(1))


def test_paley_zygmund(bmodel):
    aa = a_alpha(2.0, C_BIN)
    a = 1.2 * aa
    z = two_barrier_counts(bmodel, a, r_a(a, 2.0, C_BIN), math.log(4), 1, 3000,
                           np.random.default_rng(19))
    for theta in (0.25, 0.5, 0.75):
        rep = paley_zygmund_check(z, theta)
        assert rep.holds
    with pytest.raises(ValueError):
        paley_zygmund_check(z, 1.0)


@pytest.mark.parametrize("functional", ["one", "nonpositive", "bivariate"])
def test_many_to_one_level_one(functional, pmodel, bmodel):
    for model in (pmodel, bmodel):
        res = many_to_one_check(model, 1, functional, 40_000, np.random.default_rng(20))
        assert res.overlap
    if functional == "one":
        assert res.right.value == 1.0


def test_many_to_one_depth_limit(bmodel):
    with pytest.raises(ValueError):
        many_to_one_check(bmodel, 7, "one", 10, np.random.default_rng(1))


def test_bn_experiment(bmodel):
    aa = a_alpha(2.0, C_BIN)
    rep = bn_experiment(bmodel, 1.5 * aa, 4, 3, 300, np.random.default_rng(21), C_BIN, max_pop=300)
    assert all(b <= a for a, b in zip(rep.frequencies, rep.frequencies[1:]))
    assert rep.estimate.value > 0
    # eps -> r_a: thresholds -> 1, the event is corridor non-extinction
    near = bn_experiment(bmodel, 1.5 * aa, 4, 2, 300, np.random.default_rng(21), C_BIN,
                         eps=rep.r_a * (1 - 1e-12), max_pop=300)
    assert all(t == pytest.approx(1.0) for t in near.thresholds)
    with pytest.raises(ValueError):
        bn_experiment(bmodel, 0.9 * aa, 4, 2, 10, np.random.default_rng(1), C_BIN)
    with pytest.raises(OverflowError):
        bn_experiment(bmodel, 1.5 * aa, 4, 9, 10, np.random.default_rng(1), C_BIN)


def test_linear_barrier(bmodel):
    pos = linear_barrier_check(bmodel, 0.5, 1000, 500, np.random.default_rng(22))
    assert pos.value > 0 and pos.lower > 0
    neg = linear_barrier_check(bmodel, -0.1, 1000, 500, np.random.default_rng(22))
    assert neg.value == 0.0
    big = linear_barrier_check(bmodel, 20.0, 200, 500, np.random.default_rng(23))
    gw = galton_watson_survival(bmodel, 200, 500, np.random.default_rng(23))
    assert big.value == pytest.approx(gw.value, abs=0.02)


def test_poisson_galton_watson_extinction(pmodel):
    # extinction probability q solves q = exp(Lambda(T) (q - 1))
    mass = pmodel.total_mass
    q = 0.0
    for _ in range(2000):
        q = math.exp(mass * (q - 1))
    est = galton_watson_survival(pmodel, 60, 4000, np.random.default_rng(24), max_pop=500)
    assert est.value == pytest.approx(1 - q, abs=4 * est.std_error + 0.01)


def test_many_to_one_spine_sample_size(bmodel):
    res = many_to_one_check(bmodel, 2, "exp_bounded", 3000, np.random.default_rng(25),
                            spine_trials=1000)
    assert res.left.n == 3000 and res.right.n == 1000
