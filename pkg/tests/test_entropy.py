import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from test_acceptance import one_of_each_family
from unraveling_lab import catalog, entropy, keepswitch, linrep, pmp
from unraveling_lab.entropy import (AssumptionBViolation, MissingLabelsError, entropy_production,
                                    finite_pressure, finite_pressure_grid, pressure_curve,
                                    pressure_spectral, rate_function, reversal_pair, sigma_T)

KS = keepswitch.KSParams(0.6, 0.3)
X00 = dict(epsilon=1.0, omega=0.7, lam=0.5, t=1.3, beta=1.0)
XXZ = dict(epsilon=1.0, omega=0.7, lam=0.5, mu=0.3, t=1.3, beta=0.8)
TWO_TIME = [(f, p) for f, p in one_of_each_family() if f in catalog.TWO_TIME_FAMILIES]


def built(family, params):
    return catalog.build_instrument(catalog.FamilyParams(family, params))


def ks_pair():
    return reversal_pair(keepswitch.ks_pmp(KS), keepswitch.KS_THETA)


def thermal(beta, epsilon):
    w = np.exp(-beta * epsilon / 2 * np.array([1.0, -1.0]))
    return np.diag(w / w.sum())


def test_sigma_zero_when_measures_coincide():
    spec = pmp.markov_pmp([[0.3, 0.7], [0.6, 0.4]])
    for w in itertools.product("01", repeat=4):
        assert sigma_T(spec, spec, w) == 0.0


def test_sigma_signals_support_mismatch():
    spec = pmp.bernoulli_pmp({"a": 0.0, "b": 0.4, "c": 0.6})
    P, Phat = reversal_pair(spec, {"a": "b", "b": "a", "c": "c"})
    with pytest.raises(AssumptionBViolation):
        sigma_T(P, Phat, "b")
    with pytest.raises(ValueError):
        sigma_T(P, Phat, "a")


def test_keep_switch_sigma_three_ways():
    words = list(itertools.product("KS", repeat=9))
    out = keepswitch.sigma_three_ways(KS, words)
    assert np.max(np.abs(out["direct"] - out["fm"])) <= 1e-10
    assert np.max(np.abs(out["direct"] - out["fm_probabilities"])) <= 1e-10
    P, Phat = ks_pair()
    for w, ref in zip(words[:50], out["direct"]):
        assert sigma_T(P, Phat, w) == pytest.approx(ref, abs=1e-10)


@pytest.mark.parametrize("family,params", TWO_TIME)
def test_two_time_sigma_close_to_entropy_increment(family, params):
    b = built(family, params)
    inst = b.instrument
    P, Phat = reversal_pair(inst)
    r = np.linalg.eigvalsh(inst.rho)
    bound = math.log(r.max() / r.min())
    T = 6 if len(inst.alphabet) <= 4 else 3
    for w in itertools.product(inst.alphabet, repeat=T):
        if not P.in_support(w):
            continue
        dS = sum(b.delta_S[a] for a in w)
        assert abs(sigma_T(P, Phat, w) - dS) <= bound + 1e-9


def test_finite_pressure_endpoints():
    P, Phat = ks_pair()
    for T in (1, 4, 8):
        assert finite_pressure(P, Phat, 0.0, T) == pytest.approx(0.0, abs=1e-13)
        assert finite_pressure(P, Phat, 1.0, T) == pytest.approx(0.0, abs=1e-13)


def test_finite_pressure_matches_bruteforce_sum():
    P, Phat = ks_pair()
    alpha, T = 0.3, 7
    ref = 0.0
    for w in itertools.product("KS", repeat=T):
        lp, lh = P.log_prob(w), Phat.log_prob(w)
        if np.isfinite(lp):
            ref += math.exp((1 - alpha) * lp + alpha * lh)
    assert finite_pressure(P, Phat, alpha, T) == pytest.approx(math.log(ref), abs=1e-12)


def test_finite_pressure_convex_in_alpha():
    P, Phat = ks_pair()
    alphas = np.linspace(-1.5, 2.5, 41)
    vals = finite_pressure_grid(P, Phat, alphas, 8)
    assert np.min(np.diff(vals, 2)) >= -1e-8


def test_finite_pressure_budget():
    P, Phat = ks_pair()
    with pytest.raises(linrep.BudgetExceededError):
        finite_pressure(P, Phat, 0.5, 20, budget=1000)


def test_mean_sigma_nonnegative():
    P, Phat = ks_pair()
    for T in range(1, 9):
        assert entropy.mean_sigma(P, Phat, T) >= -1e-14


@pytest.mark.parametrize("family,params", TWO_TIME)
def test_spectral_pressure_zero_at_ends_and_symmetric(family, params):
    inst = built(family, params).instrument
    assert abs(pressure_spectral(inst, 0.0)) <= 1e-12
    assert abs(pressure_spectral(inst, 1.0)) <= 1e-12
    grid = np.linspace(-2, 3, 21)
    assert np.max(np.abs(pressure_spectral(inst, grid) - pressure_spectral(inst, 1 - grid))) <= 1e-10


def test_spectral_pressure_pmp_route_agrees():
    b = built("x00_two_time", X00)
    grid = np.linspace(-2, 3, 11)
    via_inst = pressure_spectral(b.instrument, grid)
    via_pmp = pressure_spectral(pmp.as_pmp(b.pmp), grid, b.delta_S)
    assert np.max(np.abs(via_inst - via_pmp)) <= 1e-10


def test_xxz_two_time_pressure_vanishes():
    inst = built("xxz_two_time", XXZ).instrument
    assert np.max(np.abs(pressure_spectral(inst, np.linspace(-2, 3, 26)))) <= 1e-12
    assert entropy_production(inst).value == pytest.approx(0.0, abs=1e-14)


def test_spectral_pressure_needs_labels():
    with pytest.raises(MissingLabelsError):
        pressure_spectral(built("keep_switch", dict(q1=0.6, q2=0.3)).instrument, 0.5)
    with pytest.raises(MissingLabelsError):
        pressure_spectral(keepswitch.ks_pmp(KS), 0.5)


def test_spectral_pressure_is_limit_of_finite_pressures():
    b = built("x00_two_time", X00)
    P, Phat = reversal_pair(b.instrument)
    e = pressure_spectral(b.instrument, 0.5)
    gaps = [abs(finite_pressure(P, Phat, 0.5, T) / T - e) for T in (2, 4, 6, 8)]
    assert np.all(np.diff(gaps) < 0)


def test_ep_zero_for_identical_measures():
    spec = pmp.markov_pmp([[0.3, 0.7], [0.6, 0.4]])
    res = entropy_production(None, P=spec.rep, Phat=spec.rep, T_list=(4, 6, 8))
    assert res.value == pytest.approx(0.0, abs=1e-14)


def test_ep_x00_two_time_closed_form():
    inst = built("x00_two_time", X00).instrument
    sp, sm = catalog.x00_s_pair(1.0, 0.7, 0.5, 1.3)
    be = X00["beta"] * X00["epsilon"]
    expected = 2 * sp * sm / (sp + sm) * be * math.tanh(be / 2)
    assert entropy_production(inst).value == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("family,params", TWO_TIME)
def test_ep_matches_catalog_closed_form(family, params):
    fp = catalog.FamilyParams(family, params)
    inst = catalog.build_instrument(fp).instrument
    assert entropy_production(inst).value == pytest.approx(catalog.closed_form(fp, "ep"),
                                                           abs=1e-10)


@pytest.mark.parametrize("family,params", [("x00_two_time", X00), ("xxz_two_time", XXZ)])
def test_ep_equals_relative_entropy_form(family, params):
    b = built(family, params)
    p = b.params
    if family.startswith("x00"):
        U = oracles.expm_propagator(oracles.x00_hamiltonian(p["epsilon"], p["omega"],
                                                            p["lambda"]), p["t"])
    else:
        U = oracles.expm_propagator(oracles.xxz_hamiltonian(p["epsilon"], p["omega"], p["lambda"],
                                                            p["mu"]), p["t"])
    rho_p = thermal(p["beta"], p["epsilon"])
    rel = entropy.ep_relative_entropy(b.instrument.rho, rho_p, U, probe_first=True)
    assert entropy_production(b.instrument).value == pytest.approx(rel, abs=1e-10)


def test_ep_keep_switch_from_pressure_and_enumeration():
    closed = keepswitch.ks_ep_and_clt(KS)["ep"]
    f = lambda a: keepswitch.ks_pressure(KS, a)
    one_sided = entropy_production(None, pressure=f, side=1)
    assert one_sided.value == pytest.approx(closed, abs=1e-6)



def test_ep_enumeration_slope_two_time():
    # sigma_T differs from a sum of increments by a bounded term; the residual drift
    # comes from the slow mixing of the invariant state at these parameters
    inst = built("x00_two_time", X00).instrument
    P, Phat = reversal_pair(inst)
    slope = entropy_production(None, P=P, Phat=Phat, T_list=(4, 6, 8))
    assert slope.method == "enumeration slope"
    assert slope.value == pytest.approx(entropy.ep_two_time(inst), rel=0.02)


def test_rate_function_of_zero_pressure():
    curve = pressure_curve(lambda a: 0.0, np.linspace(-1, 2, 7))
    rf = rate_function(curve, [-0.5, 0.0, 0.5])
    assert rf.values[1] == pytest.approx(0.0, abs=1e-12)
    assert np.isinf(rf.values[0]) and np.isinf(rf.values[2])


def test_rate_function_gallavotti_cohen_two_time():
    inst = built("x00_two_time", X00).instrument
    curve = pressure_curve(lambda a: pressure_spectral(inst, a), np.linspace(-2, 3, 21))
    rf = rate_function(curve, np.linspace(-0.2, 0.2, 9))
    assert np.all(rf.values >= -1e-12)
    finite = np.isfinite(rf.gc_residual)
    assert finite.sum() >= 5
    assert np.nanmax(np.abs(rf.gc_residual)) <= 1e-6


def test_rate_function_keep_switch_has_unique_zero_at_ep():
    ep = keepswitch.ks_ep_and_clt(KS)["ep"]
    curve = pressure_curve(lambda a: keepswitch.ks_pressure(KS, a), np.linspace(-3, 4, 29))
    rf = rate_function(curve)
    finite = np.isfinite(rf.values)
    s, vals = rf.s[finite], rf.values[finite]
    assert finite.sum() >= 30
    assert np.all(vals >= -1e-9)
    assert np.min(np.diff(vals, 2)) >= -1e-7
    step = s[1] - s[0]
    assert abs(s[np.argmin(vals)] - ep) <= step
    assert rate_function(curve, [ep]).values[0] == pytest.approx(0.0, abs=1e-8)


def test_error_exponents_trivial_pair():
    spec = pmp.markov_pmp([[0.3, 0.7], [0.6, 0.4]])
    ex = entropy.error_exponents(spec.rep, spec.rep, lambda a: 0.0, 0.0, T_list=(4,))
    assert ex.stein == 0.0 and ex.chernoff == 0.0
    assert ex.hoeffding(0.3) == pytest.approx(0.0, abs=1e-12)
    assert ex.chernoff_finite_T[4] == pytest.approx(math.log(0.5) / 4, abs=1e-12)


def test_error_exponents_symmetric_pressure():
    inst = built("x00_two_time", X00).instrument
    f = lambda a: pressure_spectral(inst, a)
    ep = entropy_production(inst).value
    P, Phat = reversal_pair(inst)
    ex = entropy.error_exponents(P, Phat, f, ep)
    assert ex.stein == -ep
    assert ex.chernoff_alpha == pytest.approx(0.5, abs=1e-5)
    assert ex.chernoff == pytest.approx(f(0.5), abs=1e-10)
    # the Hoeffding exponent at s = ep is the Stein exponent
    assert ex.hoeffding(-ep) <= 0.0 + 1e-8


def test_chernoff_finite_trend_keep_switch():
    P, Phat = ks_pair()
    target = keepswitch.ks_pressure(KS, 0.5)
    gaps = [abs(entropy.chernoff_finite(P, Phat, T) - target) for T in (6, 8, 10)]
    assert gaps[0] > gaps[1] > gaps[2]


def test_weak_gibbs_bernoulli_is_zero():
    spec = pmp.bernoulli_pmp({"a": 0.2, "b": 0.8})
    for T in (2, 5, 9):
        assert entropy.weak_gibbs_diagnostic(spec, T) == pytest.approx(0.0, abs=1e-13)


def test_weak_gibbs_keep_switch_witness():
    spec = keepswitch.ks_pmp(KS)
    bound = 0.5 * math.log(KS.q1 / KS.q2)
    vals = {}
    for n in (20, 40, 80):
        witness = ["K"] * n + ["S"] + ["K"] * n
        vals[n] = entropy.weak_gibbs_diagnostic(spec, 2 * n + 1, witnesses=[witness])
    assert vals[20] < vals[40] < vals[80] < bound
    # the deficit decays like 1/n
    assert 2 * vals[80] - vals[40] == pytest.approx(bound, abs=5e-3)
    exhaustive = entropy.weak_gibbs_diagnostic(spec, 11)
    assert exhaustive >= entropy.weak_gibbs_diagnostic(spec, 11, witnesses=[["K"] * 5 + ["S"] + ["K"] * 5]) - 1e-12


def test_sample_words_follow_the_measure():
    spec = pmp.markov_pmp([[0.1, 0.9], [0.5, 0.5]])
    words = entropy.sample_words(spec.rep, 2, 4000, seed=7)
    freq = sum(1 for w in words if w == ["0", "1"]) / len(words)
    expected = math.exp(pmp.pmp_prob(spec, "01"))
    assert abs(freq - expected) <= 4 * math.sqrt(expected * (1 - expected) / len(words))


def test_entropy_rate_bernoulli_and_markov():
    Q = {"a": 0.2, "b": 0.3, "c": 0.5}
    assert entropy.entropy_rate(pmp.bernoulli_pmp(Q), 5) == pytest.approx(
        -sum(q * math.log(q) for q in Q.values()), abs=1e-12)
    P = np.array([[0.1, 0.6, 0.3], [0.5, 0.2, 0.3], [0.3, 0.3, 0.4]])
    assert entropy.entropy_rate(pmp.markov_pmp(P), 6) == pytest.approx(
        oracles.markov_entropy_rate(P, oracles.stationary_by_eig(P)), abs=1e-12)


def test_keep_switch_entropy_rate_two_routes_and_monotone_bound():
    h = keepswitch.ks_entropy_rate(KS)
    assert keepswitch.entropy_rate_from_pair(KS) == pytest.approx(h, abs=1e-12)
    spec = keepswitch.ks_pmp(KS)
    cond = [entropy.entropy_rate(spec, T) for T in range(2, 11)]
    assert np.all(np.diff(cond) <= 1e-13)
    assert cond[-1] >= h - 1e-12


@settings(max_examples=10)
@given(seed=st.integers(0, 10_000))
def test_relative_entropy_nonnegative_random_pmp(seed):
    rng = np.random.default_rng(seed)
    parts = oracles.random_stochastic(rng, 2, 2)
    spec = pmp.PMPSpec("ab", {"a": parts[0], "b": parts[1]},
                       oracles.stationary_by_eig(parts.sum(axis=0)))
    P, Phat = reversal_pair(spec, {"a": "b", "b": "a"})
    for T in (1, 3, 5):
        assert entropy.mean_sigma(P, Phat, T) >= -1e-13
    vals = finite_pressure_grid(P, Phat, np.linspace(-1, 2, 13), 5)
    assert vals[np.argmin(np.abs(np.linspace(-1, 2, 13)))] == pytest.approx(0.0, abs=1e-13)
    assert np.min(np.diff(vals, 2)) >= -1e-8
