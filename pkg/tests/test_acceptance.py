"""Acceptance criteria 1 to 11, each at its stated tolerance.

Every test records one pass/fail line through the ``acceptance`` fixture
before asserting. Running this file as a script prints the same lines.
"""

from __future__ import annotations

import math
import re
import sys
import time

import numpy as np
import scipy.integrate
import scipy.special
import scipy.stats

import oracles
from unraveling_lab import catalog, entropy, keepswitch, linrep, pmp, rotational

ALPHA_GRID = np.linspace(-2.0, 3.0, 11)
KS_PARAMS = keepswitch.KSParams(0.6, 0.3)


# ---------------------------------------------------------------- shared draws


def _weights(rng, k):
    w = rng.dirichlet(np.ones(k))
    w = np.maximum(w, 0.05)
    return list(w / w.sum())


def two_time_draws(seed: int = 20240611, n: int = 5):
    """Five random parameter records for each two-time family."""
    rng = np.random.default_rng(seed)
    draws = []
    for _ in range(n):
        eps, omega, lam, t = rng.uniform(0.3, 2.0, 4)
        mu = rng.uniform(-1.0, 1.0)
        beta = rng.uniform(0.2, 2.0)
        betas3 = list(rng.uniform(0.1, 2.5, 3))
        draws += [
            ("xxz_two_time", dict(epsilon=eps, omega=omega, lam=lam, mu=mu, t=t, beta=beta)),
            ("xxz_random_thermal", dict(epsilon=eps, omega=omega, lam=lam, mu=mu, t=t,
                                        betas=betas3, weights=_weights(rng, 3))),
            ("xxz_multi_thermal", dict(epsilon=eps, omega=eps, lam=lam, mu=0.0, t=t,
                                       betas=list(rng.uniform(0.1, 2.5, 2)))),
            ("x00_two_time", dict(epsilon=eps, omega=omega, lam=lam, t=t, beta=beta)),
            ("x00_random_thermal", dict(epsilon=eps, omega=omega, lam=lam, t=t,
                                        betas=betas3, weights=_weights(rng, 3))),
        ]
    return draws


def one_of_each_family():
    """A representative parameter record for every catalog family."""
    rot = math.sqrt(5) - 1
    return [
        ("bernoulli", dict(Q={"a": 0.3, "b": 0.7}, theta={"a": "b", "b": "a"})),
        ("markov", dict(P=[[0.2, 0.8], [0.5, 0.5]], theta={"0": "1", "1": "0"})),
        ("von_neumann", dict(unitary=[[math.cos(0.3), math.sin(0.3)],
                                      [-math.sin(0.3), math.cos(0.3)]])),
        ("keep_switch", dict(q1=0.6, q2=0.3)),
        ("xxz_one_time", dict(epsilon=1.0, omega=0.7, lam=0.5, mu=0.3, t=1.3, eta=0.2)),
        ("xxz_two_time", dict(epsilon=1.0, omega=0.7, lam=0.5, mu=0.3, t=1.3, beta=0.8)),
        ("xxz_random_thermal", dict(epsilon=1.0, omega=0.7, lam=0.5, mu=0.3, t=1.3,
                                    betas=[0.3, 1.0, 2.0], weights=[0.2, 0.3, 0.5])),
        ("xxz_multi_thermal", dict(epsilon=1.0, omega=0.7, lam=0.5, mu=0.3, t=1.3,
                                   betas=[0.3, 2.0])),
        ("x00_one_time", dict(epsilon=1.0, omega=0.7, lam=0.5, t=1.3, eta=0.2)),
        ("x00_two_time", dict(epsilon=1.0, omega=0.7, lam=0.5, t=1.3, beta=1.0)),
        ("x00_random_thermal", dict(epsilon=1.0, omega=0.7, lam=0.5, t=1.3,
                                    betas=[0.3, 1.0, 2.0], weights=[0.2, 0.3, 0.5])),
        ("rotational", dict(delta=rot)),
    ]


def enumerated_mass(rep: linrep.LinearRep, T: int) -> float:
    total = 0.0
    for _, (lp,) in linrep.enumerate_words([rep], T, budget=10 ** 8):
        total += math.fsum(np.exp(lp[np.isfinite(lp)]))
    return total


# ---------------------------------------------------------------- criteria


def check_1():
    start = time.perf_counter()
    worst = 0.0
    for fam, params in two_time_draws():
        fp = catalog.FamilyParams(fam, params)
        built = catalog.build_instrument(fp)
        numeric = entropy.pressure_spectral(built.instrument, ALPHA_GRID)
        closed = np.array([catalog.closed_form(fp, "pressure", a) for a in ALPHA_GRID])
        worst = max(worst, float(np.max(np.abs(numeric - closed))))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed < 10.0
    return ok, f"max |spectral - closed form| = {worst:.2e}, runtime {elapsed:.1f} s"


def check_2():
    worst_ends, worst_sym = 0.0, 0.0
    for fam, params in two_time_draws():
        built = catalog.build_instrument(catalog.FamilyParams(fam, params))
        e = lambda a: entropy.pressure_spectral(built.instrument, a)
        worst_ends = max(worst_ends, abs(e(0.0)), abs(e(1.0)))
        worst_sym = max(worst_sym, max(abs(e(a) - e(1 - a)) for a in ALPHA_GRID))
    worst_mass = 0.0
    for fam, params in one_of_each_family():
        rep = catalog.build_instrument(catalog.FamilyParams(fam, params)).instrument.rep
        k = len(rep.alphabet)
        for T in range(1, 9):
            # summing Omega_T word by word is feasible up to ~10^6 words; beyond
            # that the sum runs through the summed transfer matrix
            mass = enumerated_mass(rep, T) if k ** T <= 10 ** 6 else rep.total_mass(T)
            worst_mass = max(worst_mass, abs(mass - 1.0))
    ok = worst_ends <= 1e-12 and worst_sym <= 1e-10 and worst_mass <= 1e-10
    return ok, (f"|e(0)|,|e(1)| <= {worst_ends:.1e}; |e(a)-e(1-a)| <= {worst_sym:.1e}; "
                f"|sum P_T - 1| <= {worst_mass:.1e}")


def one_over_T_fit(values, Ts, limit):
    """Least-squares C in e_T/T - e = C/T and the relative RMS residual of that fit."""
    Ts = np.asarray(Ts, dtype=float)
    dev = np.asarray(values) - limit
    C = float(np.sum(dev / Ts) / np.sum(1.0 / Ts ** 2))
    resid = dev - C / Ts
    return C, float(np.linalg.norm(resid) / np.linalg.norm(dev))


def check_3():
    start = time.perf_counter()
    Ts = (6, 8, 10, 12)
    alphas = (0.25, 0.5, 0.75)
    ks_spec = keepswitch.ks_pmp(KS_PARAMS)
    x00 = catalog.FamilyParams("x00_two_time", dict(s_plus=0.4, s_minus=0.2, beta=1.0,
                                                    epsilon=1.0))
    x00_built = catalog.build_instrument(x00)
    systems = {
        "keep_switch": (entropy.reversal_pair(ks_spec, keepswitch.KS_THETA),
                        lambda a: keepswitch.ks_pressure(KS_PARAMS, a)),
        "x00_two_time": (entropy.reversal_pair(x00_built.pmp, x00_built.theta),
                         lambda a: catalog.closed_form(x00, "pressure", a)),
    }
    parts, ok = [], True
    for name, ((P, Phat), closed) in systems.items():
        table = np.array([entropy.finite_pressure_grid(P, Phat, alphas, T, budget=10 ** 8) / T
                          for T in Ts])
        worst = 0.0
        for j, a in enumerate(alphas):
            _, resid = one_over_T_fit(table[:, j], Ts, closed(a))
            worst = max(worst, resid)
        ok &= worst <= 0.10
        parts.append(f"{name} residual {worst:.1%}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 60.0
    return ok, ", ".join(parts) + f", runtime {elapsed:.1f} s"


def check_4():
    cons = keepswitch.ks_ep_and_clt(KS_PARAMS)
    e = lambda a: keepswitch.ks_pressure(KS_PARAMS, a)
    # e'' jumps at 0, so the central-difference truncation error is
    # (jump / 4) h; h = 1e-7 keeps it below 1e-8
    h = 1e-7
    ep_numeric = -(e(h) - e(-h)) / (2 * h)
    ep_err = abs(ep_numeric - cons["ep"])

    def one_sided_second(side, step=1e-3):
        f = [e(side * k * step) for k in range(4)]
        return (2 * f[0] - 5 * f[1] + 4 * f[2] - f[3]) / step ** 2

    right, left = one_sided_second(+1), one_sided_second(-1)
    jump_err = abs((right - left) - cons["VarZ2"])
    var1_err = abs(left - cons["VarZ1"])
    jump_vs_formula = abs(keepswitch.ks_jump(KS_PARAMS) - cons["VarZ2"])
    ok = ep_err <= 1e-8 and jump_err <= 1e-6 and var1_err <= 1e-6 and jump_vs_formula == 0.0
    return ok, (f"ep err {ep_err:.1e}, jump err {jump_err:.1e}, "
                f"Var(Z1) vs e''(0-) err {var1_err:.1e}")


def limit_cdf_oracle(x, var_z1, var_z2):
    """P(Z1 - |Z2| <= x) by trapezoidal quadrature on a fine grid over |Z2|."""
    s1, s2 = math.sqrt(var_z1), math.sqrt(var_z2)
    y = np.linspace(0.0, 12 * s2, 6001)
    dens = 2 * np.exp(-0.5 * (y / s2) ** 2) / (s2 * math.sqrt(2 * math.pi))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    vals = scipy.special.ndtr((x[:, None] + y[None, :]) / s1) * dens[None, :]
    return scipy.integrate.trapezoid(vals, y, axis=1)


def check_5(N: int = 100_000, T: int = 10_000):
    start = time.perf_counter()
    cons = keepswitch.ks_ep_and_clt(KS_PARAMS)
    sample = keepswitch.ks_clt_sampler(KS_PARAMS, T, N, seed=12345)
    z = np.sort(sample.standardized)
    grid = np.linspace(z[0] - 1e-9, z[-1] + 1e-9, 4001)
    cdf = np.interp(z, grid, limit_cdf_oracle(grid, cons["VarZ1"], cons["VarZ2"]))
    n = z.size
    stat = float(max(np.max(np.arange(1, n + 1) / n - cdf), np.max(cdf - np.arange(n) / n)))
    critical = float(scipy.stats.kstwo.ppf(0.99, n))
    mean, se = float(np.mean(z)), float(np.std(z, ddof=1) / math.sqrt(n))
    target = -math.sqrt(2 * cons["VarZ2"] / math.pi)
    elapsed = time.perf_counter() - start
    ok = stat < critical and abs(mean - target) <= 3 * se and elapsed < 300
    return ok, (f"KS {stat:.4f} < {critical:.4f}; mean {mean:.4f} vs {target:.4f} "
                f"(3 se = {3 * se:.4f}); runtime {elapsed:.0f} s")


def check_6():
    rep = keepswitch.fdr_compute((4, 8, 12))
    finite = max(float(np.max(np.abs(rep.L_T[T] - 0.5 * rep.D_T[T]))) for T in rep.T_list)
    enumerated = max(float(np.max(np.abs(keepswitch.diffusion_enumerated(T) - rep.D_T[T])))
                     for T in rep.T_list)
    l_inf = float(np.max(np.abs(rep.L_inf - np.array([[3.0, 1.0], [1.0, 3.0]]))))
    d_inf = float(np.max(np.abs(0.5 * rep.D_inf - np.array([[2.0, 2.0], [2.0, 2.0]]))))
    ok = finite <= 1e-6 and enumerated <= 1e-10 and l_inf <= 1e-4 and d_inf <= 1e-4
    return ok, (f"|L_T - D_T/2| <= {finite:.1e}, L_inf err {l_inf:.1e}, "
                f"D_inf/2 err {d_inf:.1e}")


def positive_pmp(seed: int = 7) -> pmp.PMPSpec:
    rng = np.random.default_rng(seed)
    parts = oracles.random_stochastic(rng, 3, k=2, low=0.1)
    mats = {"a": parts[0], "b": parts[1]}
    return pmp.PMPSpec("ab", mats, oracles.stationary_by_eig(parts.sum(axis=0)))


def check_7():
    T = 14
    parts, ok = [], True
    bern = pmp.bernoulli_pmp({"a": 0.3, "b": 0.2, "c": 0.5})
    bern_val = max(entropy.weak_gibbs_diagnostic(bern, t) for t in (4, 8, 10))
    ok &= bern_val <= 1e-12
    parts.append(f"Bernoulli {bern_val:.1e}")
    spec = positive_pmp()
    C = pmp.gibbs_constant(spec)
    cert = max(-math.log(C), -math.log(float(spec.p.min())))
    vals = {t: entropy.weak_gibbs_diagnostic(spec, t) for t in (4, 6, 8, 10, 12)}
    decay = all(vals[t] <= cert / t for t in vals) and vals[12] < vals[4]
    ok &= C is not None and decay
    parts.append(f"positive PMP C={C:.3f}, T*diag(12)={12 * vals[12]:.3f} <= {cert:.3f}")
    correction = 1 - 5 / T
    ks_val = entropy.weak_gibbs_diagnostic(keepswitch.ks_pmp(KS_PARAMS), T)
    ks_bound = 0.5 * math.log(KS_PARAMS.q1 / KS_PARAMS.q2) * correction
    ok &= ks_val >= ks_bound
    parts.append(f"Keep-Switch {ks_val:.4f} >= {ks_bound:.4f}")
    s = 0.5
    fp = catalog.FamilyParams("xxz_two_time", dict(epsilon=1.0, omega=0.7, lam=0.5, mu=0.3,
                                                   s=s, beta=1.0))
    built = catalog.build_instrument(fp)
    half = T // 2
    witnesses = [["++"] * (half - 1) + ["-+"] + ["++"] * half,
                 ["++"] * half + ["-+"] + ["++"] * (half - 1)]
    xxz_val = entropy.weak_gibbs_diagnostic(built.instrument, T, sample_budget=50,
                                            witnesses=witnesses, seed=3)
    xxz_bound = 0.5 * math.log(1 / (1 - s)) * correction
    ok &= xxz_val >= xxz_bound
    parts.append(f"XXZ two-time {xxz_val:.4f} >= {xxz_bound:.4f}")
    return ok, "; ".join(parts)


def random_measure_specs(seed: int = 99, n: int = 10):
    rng = np.random.default_rng(seed)
    specs = []
    for i in range(n):
        d, k = int(rng.integers(2, 4)), int(rng.integers(2, 4))
        alphabet = "abc"[:k]
        if i % 2 == 0:
            parts = oracles.random_stochastic(rng, d, k=k)
            # sprinkle exact zeros to exercise the support logic
            parts[0][0, 0] = 0.0
            parts = parts / parts.sum(axis=(0, 2))[None, :, None]
            mats = {a: parts[j] for j, a in enumerate(alphabet)}
            specs.append(pmp.PMPSpec(alphabet, mats,
                                     oracles.stationary_by_eig(parts.sum(axis=0))))
        else:
            n_hidden = int(rng.integers(k, k + 3))
            Q = oracles.random_stochastic(rng, n_hidden)
            f = {f"h{j}": alphabet[j % k] for j in range(n_hidden)}
            specs.append(pmp.FMSpec(list(f), Q, oracles.stationary_by_eig(Q), f))
    return specs


def check_8():
    worst, worst_oracle = 0.0, 0.0
    for spec in random_measure_specs():
        base = pmp.as_pmp(spec)
        chains = [["hm", pmp.kind_of(spec)], ["fm", "hm", "pmp"], ["hm", "fm", "pmp"]]
        for chain in chains:
            out = spec
            for kind in chain:
                out = pmp.convert(out, kind)
            other = pmp.as_pmp(out)
            for _, (la, lb) in linrep.enumerate_words([base.rep, other.rep], 8, prune=False):
                if np.any(np.isfinite(la) != np.isfinite(lb)):
                    worst = math.inf
                both = np.isfinite(la)
                if both.any():
                    worst = max(worst, float(np.max(np.abs(la[both] - lb[both]))))
        # independent oracle on short words: hidden-path sums of the HM form
        hm = pmp.convert(spec, "hm")
        emit = lambda l, a, hm=hm: hm.R[l, hm.alphabet.index(a)]
        for word in oracles.all_words(base.alphabet, 3):
            ref = oracles.hidden_path_prob(hm.Q, hm.q, emit, word)
            got = math.exp(pmp.pmp_prob(base, word)) if ref > 0 else 0.0
            worst_oracle = max(worst_oracle, abs(got - ref))
    ok = worst <= 1e-12 and worst_oracle <= 1e-14
    return ok, f"max log-prob diff on Omega_8 {worst:.1e}, path-sum oracle diff {worst_oracle:.1e}"


def check_9():
    parts, ok = [], True
    angle = rotational.construct_delta("T2", (0.3, 0.4))
    probe = rotational.pressure_divergence_probe(angle, 2.0)
    logs = [float(r.log_witness) for r in probe.rows]
    gaps = np.diff(logs)
    superlinear = len(logs) >= 3 and bool(np.all(gaps > 0)) and bool(np.all(np.diff(gaps) > 0))
    ok &= probe.diverges and superlinear and angle.certificate["convergents_ok"]
    parts.append(f"alpha=2 log-witness {', '.join(f'{v:.3g}' for v in logs)}")
    deriv = rotational.derivative_probe(angle)
    series = 1.0 / 6.0  # sum_n n^2 3^(-n-2) = (1/9) * (1/3)(4/3)/(2/3)^3
    bound_ok = (deriv.bound_finite and abs(deriv.increment_bound - series) <= 1e-12
                and max(deriv.increments) <= series)
    ok &= bound_ok
    parts.append(f"T^2 increments <= {max(deriv.increments):.4f} <= sum {series:.4f}")
    fast = rotational.construct_delta("expT2", (0.3, 0.4))
    fast_deriv = rotational.derivative_probe(fast)
    ok &= fast_deriv.derivative_sequence_increasing and len(fast_deriv.log_derivative_sequence) >= 2
    parts.append(f"exp(T^2) derivative sequence increasing over "
                 f"{len(fast_deriv.log_derivative_sequence)} convergents")
    inst = rotational.rotational_instrument(angle)
    mismatches = 0
    no_11 = re.compile("11")
    for T in range(1, 9):
        for words, (lp,) in linrep.enumerate_words([inst.rep], T, prune=False):
            for w, v in zip(words, lp):
                s = "".join(inst.rep.alphabet[i] for i in w)
                mismatches += int(bool(np.isfinite(v)) == bool(no_11.search(s)))
    ok &= mismatches == 0
    parts.append(f"support mismatches for T <= 8: {mismatches}")
    return ok, "; ".join(parts)


def check_10(draws: int = 20):
    rng = np.random.default_rng(4242)
    worst = 0.0
    for _ in range(draws):
        eps, omega, lam, t = rng.uniform(0.2, 3.0, 4)
        mu = rng.uniform(-1.5, 1.5)
        pairs = [
            (catalog.xxz_propagator(eps, omega, lam, mu, t),
             oracles.expm_propagator(oracles.xxz_hamiltonian(eps, omega, lam, mu), t)),
            (catalog.x00_propagator(eps, omega, lam, t),
             oracles.expm_propagator(oracles.x00_hamiltonian(eps, omega, lam), t)),
            (catalog.multi_thermal_propagator(eps, omega, lam, mu, t),
             oracles.expm_propagator(oracles.multi_thermal_hamiltonian(eps, omega, lam, mu), t)),
        ]
        for closed, ref in pairs:
            worst = max(worst, float(np.max(np.abs(closed - ref))))
    worst_excess = -math.inf
    horizon = {4: 8, 12: 5, 16: 4}
    for fam, params in one_of_each_family():
        if fam not in catalog.TWO_TIME_FAMILIES:
            continue
        built = catalog.build_instrument(catalog.FamilyParams(fam, params))
        inst = built.instrument
        eig = np.linalg.eigvalsh(inst.rho)
        bound = math.log(eig.max() / eig.min())
        P, Phat = entropy.reversal_pair(inst)
        dS = np.array([inst.delta_S[a] for a in inst.alphabet])
        for T in range(1, horizon[len(inst.alphabet)] + 1):
            for words, (lp, lh) in linrep.enumerate_words([P, Phat], T, budget=10 ** 8):
                excess = np.abs((lp - lh) - dS[words].sum(axis=1)) - bound
                worst_excess = max(worst_excess, float(np.max(excess)))
    ok = worst <= 1e-10 and worst_excess <= 1e-9
    return ok, (f"max propagator deviation {worst:.1e}; "
                f"max(|sigma_T - dS_T| - log(r+/r-)) = {worst_excess:.1e}")


def check_11():
    spec = keepswitch.ks_pmp(KS_PARAMS)
    plug_in = entropy.entropy_rate(spec, 12, 10)
    r1, r2 = KS_PARAMS.r1, KS_PARAMS.r2
    closed = (r1 * oracles.binary_entropy(KS_PARAMS.q2)
              + r2 * oracles.binary_entropy(KS_PARAMS.q1)) / (r1 + r2)
    err = abs(plug_in - closed)
    return err <= 1e-3, f"plug-in {plug_in:.5f} vs closed form {closed:.5f}, err {err:.1e}"


CRITERIA = {
    1: ("closed-form pressure oracle match", check_1),
    2: ("symmetry and normalization", check_2),
    3: ("enumeration vs spectral 1/T convergence", check_3),
    4: ("Keep-Switch analytics", check_4),
    5: ("anomalous CLT", check_5),
    6: ("fluctuation-dissipation violation", check_6),
    7: ("weak-Gibbs verdicts", check_7),
    8: ("FM/HM/PMP conversions", check_8),
    9: ("rotational singularities", check_9),
    10: ("propagator oracles and sigma_T bound", check_10),
    11: ("entropy-rate identity", check_11),
}


def _run(acceptance, number):
    title, fn = CRITERIA[number]
    ok, detail = fn()
    acceptance(number, title, ok, detail)
    assert ok, detail


def test_criterion_01_pressure_oracle(acceptance):
    _run(acceptance, 1)


def test_criterion_02_symmetry_normalization(acceptance):
    _run(acceptance, 2)


def test_criterion_03_enumeration_convergence(acceptance):
    _run(acceptance, 3)


def test_criterion_04_keep_switch_analytics(acceptance):
    _run(acceptance, 4)


def test_criterion_05_anomalous_clt(acceptance):
    _run(acceptance, 5)


def test_criterion_06_fdr_violation(acceptance):
    _run(acceptance, 6)


def test_criterion_07_weak_gibbs(acceptance):
    _run(acceptance, 7)


def test_criterion_08_conversions(acceptance):
    _run(acceptance, 8)


def test_criterion_09_rotational(acceptance):
    _run(acceptance, 9)


def test_criterion_10_propagators_sigma(acceptance):
    _run(acceptance, 10)


def test_criterion_11_entropy_rate(acceptance):
    _run(acceptance, 11)


if __name__ == "__main__":
    failures = 0
    for number, (title, fn) in CRITERIA.items():
        ok, detail = fn()
        failures += not ok
        print(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title} ({detail})", flush=True)
    sys.exit(1 if failures else 0)
