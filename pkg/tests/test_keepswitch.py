import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unraveling_lab import entropy, pmp
from unraveling_lab import keepswitch as ksw
from unraveling_lab.keepswitch import KSParams, PairKSParams

KS = KSParams(0.6, 0.3)
unit = st.floats(0.05, 0.95)


def test_params_validation_and_derived_values():
    with pytest.raises(ksw.KSParameterError):
        KSParams(1.5, 0.3)
    with pytest.raises(ksw.KSParameterError):
        KSParams(0.0, 0.3)
    assert KS.gamma == pytest.approx(0.5 * math.log(2))
    assert KS.eta == pytest.approx(0.5 * math.log(0.18 / 0.28))
    assert np.allclose(KS.p, [0.7 / 1.1, 0.4 / 1.1])


def test_q_at_zero_and_matrix_route():
    assert ksw.q_lambda(KS, (0, 0, 0)) == pytest.approx(0.0, abs=1e-15)
    odd, even = ksw.deformed_pair_matrices(KS, (0, 0, 0))
    assert max(abs(np.linalg.eigvals(odd @ even))) == pytest.approx(1.0, abs=1e-14)
    rng = np.random.default_rng(2)
    for lam in rng.uniform(-1.5, 1.5, (20, 3)):
        assert ksw.q_lambda(KS, lam) == pytest.approx(ksw.q_lambda_matrix(KS, lam), abs=1e-12)


def test_q_gradient_and_hessian_at_zero():
    r1, r2 = KS.r1, KS.r2
    grad = ksw.q_gradient_zero(KS)
    assert np.allclose(grad, np.array([r1 - 4 * r1 * r2 + r2, r2 - r1, 0.0]) / (r1 + r2))
    assert grad[2] == 0.0
    f = lambda x: ksw.q_lambda(KS, x)
    assert np.allclose(ksw.numerical_gradient(f, np.zeros(3)), grad, atol=1e-9)
    assert np.allclose(ksw.numerical_hessian(f, np.zeros(3)), ksw.q_hessian_zero(KS), atol=1e-6)


def test_q_is_limit_of_finite_cumulants():
    lam = (0.3, -0.2, 0.4)
    target = ksw.q_lambda(KS, lam)
    gaps = [abs(ksw.q_finite(KS, lam, T) - target) for T in (50, 100, 200)]
    assert gaps[2] < gaps[1] < gaps[0] and gaps[2] < 2e-3


@settings(max_examples=10)
@given(seed=st.integers(0, 10_000))
def test_q_convex(seed):
    lam = np.random.default_rng(seed).uniform(-1, 1, 3)
    H = ksw.numerical_hessian(lambda x: ksw.q_lambda(KS, x), lam, h=1e-3)
    assert np.linalg.eigvalsh(H).min() >= -1e-6


def test_pressure_endpoints_symmetry_and_matrix_route():
    assert ksw.ks_pressure(KS, 0.0) == pytest.approx(0.0, abs=1e-15)
    assert ksw.ks_pressure(KS, 1.0) == pytest.approx(0.0, abs=1e-15)
    for a in np.linspace(-2, 3, 21):
        assert ksw.ks_pressure(KS, a) == pytest.approx(ksw.ks_pressure(KS, 1 - a), abs=1e-13)
        assert ksw.ks_pressure(KS, a) == pytest.approx(ksw.ks_pressure_matrix(KS, a), abs=1e-12)


def test_pressure_convex():
    alphas = np.linspace(-3, 4, 141)
    vals = np.array([ksw.ks_pressure(KS, a) for a in alphas])
    assert np.min(np.diff(vals, 2)) >= -1e-12


def test_pressure_is_limit_of_enumerated_pressures():
    P, Phat = entropy.reversal_pair(ksw.ks_pmp(KS), ksw.KS_THETA)
    target = ksw.ks_pressure(KS, 0.5)
    gaps = [abs(entropy.finite_pressure(P, Phat, 0.5, T) / T - target) for T in (8, 10, 12)]
    assert gaps[0] > gaps[1] > gaps[2]


def test_second_derivative_jump():
    d2 = ksw.ks_second_derivatives(KS)
    jump = 4 * KS.r1 * KS.r2 / ((KS.q1 + KS.q2) * (KS.r1 + KS.r2)) * KS.gamma ** 2
    assert d2["jump"] == pytest.approx(jump, abs=1e-14)
    assert d2["jump_closed_form"] == pytest.approx(jump, abs=1e-14)
    f = lambda a: ksw.ks_pressure(KS, a)
    right = entropy.one_sided_second_derivative(f, 0.0, +1)
    left = entropy.one_sided_second_derivative(f, 0.0, -1)
    assert right - left == pytest.approx(jump, abs=1e-6)
    right1 = entropy.one_sided_second_derivative(f, 1.0, +1)
    left1 = entropy.one_sided_second_derivative(f, 1.0, -1)
    assert left1 - right1 == pytest.approx(jump, abs=1e-6)


def test_ep_and_variances():
    out = ksw.ks_ep_and_clt(KS)
    assert out["ep"] > 0
    assert out["VarZ2"] == out["jump"] == pytest.approx(ksw.ks_jump(KS))
    f = lambda a: ksw.ks_pressure(KS, a)
    h = 1e-7
    assert -(f(h) - f(-h)) / (2 * h) == pytest.approx(out["ep"], abs=1e-8)
    assert ksw.ks_second_derivatives(KS)["zero_minus"] == pytest.approx(out["VarZ1"], abs=1e-12)


def test_ep_vanishes_only_at_half():
    assert ksw.ks_ep_and_clt_any(0.5, 0.5) == pytest.approx(0.0, abs=1e-15)
    assert ksw.ks_ep_and_clt_any(0.3, 0.3) > 0


def test_limit_law_mean_and_cdf():
    var1, var2 = 0.7, 1.3
    assert ksw.limit_law_mean(var2) == pytest.approx(-math.sqrt(2 * var2 / math.pi))
    cdf = ksw.LimitLawCDF(var1, var2)
    rng = np.random.default_rng(0)
    z = rng.normal(0, math.sqrt(var1), 200_000) - np.abs(rng.normal(0, math.sqrt(var2), 200_000))
    for x in (-3.0, -1.0, 0.0, 1.0):
        assert cdf(x) == pytest.approx(np.mean(z <= x), abs=5e-3)
        assert cdf(x) == pytest.approx(ksw.limit_law_cdf_point(x, var1, var2), abs=1e-6)
    assert cdf(-1e6) == 0.0 and cdf(1e6) == 1.0


def test_trajectory_stats_invariants():
    xs = ksw.simulate_hidden(KS, 101, range(50), seed=3)
    st_ = ksw.trajectory_stats(xs)
    st_.check()
    assert np.all(st_.n_pp + st_.n_mm + st_.n_pm + st_.n_mp == 101)
    assert xs.shape == (50, 102)


def test_sigma_three_ways_and_asymptotic_constant():
    words = [list(w) for w in itertools.product("KS", repeat=10)]
    out = ksw.sigma_three_ways(KS, words)
    assert np.max(np.abs(out["direct"] - out["fm"])) <= 1e-9
    assert np.max(np.abs(out["direct"] - out["fm_probabilities"])) <= 1e-9
    gaps = []
    rng = np.random.default_rng(5)
    for T in (10, 100, 1000):
        xs = ksw.simulate_hidden(KS, T, range(200), seed=int(rng.integers(1000)))
        st_ = ksw.trajectory_stats(xs)
        gaps.append(np.max(np.abs(ksw.sigma_fm(KS, st_) - ksw.sigma_asymptotic(KS, st_))))
    # bounded in T
    assert max(gaps) <= 2 * gaps[0] + 1.0


def test_hidden_path_and_psi():
    xs = ksw.hidden_path("KSSK", 0)
    assert list(xs) == [0, 0, 1, 0, 0]
    assert list(ksw.psi_map(xs)) == [1, 0, 0, 0, 1]


@settings(max_examples=10)
@given(q1=unit, q2=unit)
def test_exchange_symmetry(q1, q2):
    a, b = ksw.ks_pmp(KSParams(q1, q2)), ksw.ks_pmp(KSParams(q2, q1))
    for w in itertools.product("KS", repeat=6):
        assert pmp.pmp_prob(a, w) == pytest.approx(pmp.pmp_prob(b, w), abs=1e-12)


def test_sampler_law_of_large_numbers_and_determinism():
    sample = ksw.ks_clt_sampler(KS, 2000, 4000, seed=11)
    s = sample.summary()
    ep = ksw.ks_ep_and_clt(KS)["ep"]
    se = np.std(sample.sigma / 2000, ddof=1) / math.sqrt(4000)
    # sigma_T / T has mean ep + E[Z1 - |Z2|] / sqrt(T) + o(1/sqrt(T))
    shifted = ep + ksw.limit_law_mean(ksw.ks_jump(KS)) / math.sqrt(2000)
    assert abs(s["mean_sigma_rate"] - shifted) <= 3 * se + 1e-3
    again = ksw.ks_clt_sampler(KS, 2000, 4000, seed=11, chunk=777)
    assert np.array_equal(sample.sigma, again.sigma)
    with pytest.raises(ksw.KSParameterError):
        ksw.ks_clt_sampler(KS, 0, 10)
    with pytest.raises(ksw.KSParameterError):
        ksw.ks_clt_sampler(KS, 10, 10, seed=-1)


def test_goodness_of_fit_small_run():
    out = ksw.ks_ep_and_clt(KS)
    sample = ksw.ks_clt_sampler(KS, 4000, 4000, seed=3)
    fit = ksw.ks_goodness_of_fit(sample.standardized, out["VarZ1"], out["VarZ2"])
    assert fit["passes"]
    bad = ksw.ks_goodness_of_fit(sample.standardized + 0.5, out["VarZ1"], out["VarZ2"])
    assert not bad["passes"]


def test_pair_identical_measures():
    res = ksw.pair_ks(PairKSParams(0.6, 0.3, 0.6, 0.3))
    assert res["ep"] == pytest.approx(0.0, abs=1e-15)
    for a in (-1.0, 0.3, 2.0):
        assert res["pressure"](a) == pytest.approx(0.0, abs=1e-13)


def test_pair_q_matrix_route_and_enumeration():
    pp = PairKSParams(0.6, 0.3, 0.45, 0.2)
    rng = np.random.default_rng(4)
    for lam in rng.uniform(-1, 1, (10, 2)):
        assert ksw.pair_q(pp, lam) == pytest.approx(ksw.pair_q_matrix(pp, lam), abs=1e-12)
    P = ksw.ks_pmp(KSParams(0.6, 0.3))
    Phat = ksw.ks_pmp(KSParams(0.45, 0.2))
    res = ksw.pair_ks(pp)
    assert res["clt_case"] == "gaussian"
    f = res["pressure"]
    assert -(f(1e-7) - f(-1e-7)) / 2e-7 == pytest.approx(res["ep"], abs=1e-8)
    # E(sigma_T) carries a sqrt(T) term from the |V_T| contributions, so the
    # enumerated increments approach ep slowly
    increments = (entropy.mean_sigma(P, Phat, 14) - entropy.mean_sigma(P, Phat, 12)) / 2
    assert increments == pytest.approx(res["ep"], rel=1e-2)
    assert entropy.finite_pressure(P, Phat, 0.5, 14) / 14 == pytest.approx(
        res["pressure"](0.5), abs=1e-4)


def test_pair_uniform_reference_gives_entropy_rate():
    assert ksw.entropy_rate_from_pair(KS) == pytest.approx(ksw.ks_entropy_rate(KS), abs=1e-12)


def test_pair_anomalous_case():
    pp = PairKSParams(0.4, 0.4, 0.3, 0.6)
    res = ksw.pair_ks(pp)
    assert pp.gamma == 0 and pp.chi != 0
    assert res["clt_case"] == "Z1-|Z2|"
    assert res["variances"]["Z1"] == pytest.approx(0.4 * 0.6 * pp.eta ** 2)
    assert res["variances"]["Z2"] == pytest.approx(0.4 / 0.6 * pp.chi ** 2)


def test_fdr_report():
    rep = ksw.fdr_compute((4, 8, 12))
    for T in (4, 8, 12):
        assert np.allclose(rep.D_T[T], 4 * np.ones((2, 2)), atol=1e-12)
        assert np.allclose(rep.D_T[T], ksw.diffusion_enumerated(T), atol=1e-12)
        assert np.max(np.abs(rep.L_T[T] - 0.5 * rep.D_T[T])) <= 1e-6
        assert np.allclose(rep.D_T[T], rep.D_T[T].T)
    assert np.allclose(rep.L_inf, [[3, 1], [1, 3]], atol=1e-8)
    assert not np.allclose(rep.L_inf, 0.5 * rep.D_inf, atol=0.5)
    with pytest.raises(ksw.KSParameterError):
        ksw.fdr_compute((40,))
    with pytest.raises(ksw.KSParameterError):
        ksw.fdr_compute((4,), step=0.5)
