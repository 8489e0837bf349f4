"""Keep-Switch instruments: cumulant function, exact pressure, anomalous CLT and FDR.

Hidden-chain states are encoded as 0 for "+" and 1 for "-".  Symbols are "K"
(keep) and "S" (switch).
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.integrate
import scipy.interpolate
import scipy.stats

from .numerics import spectral_radius
from .pmp import PMPSpec

KS_ALPHABET = ("K", "S")
KS_THETA = {"K": "S", "S": "K"}
DEFAULT_CHUNK = 1000


class KSParameterError(ValueError):
    """Keep-Switch parameters outside ]0,1[ or invalid sampler sizes."""


def _check_unit(*vals):
    for v in vals:
        if not 0 < v < 1:
            raise KSParameterError(f"parameter {v} is outside ]0,1[")


@dataclass(frozen=True)
class KSParams:
    q1: float
    q2: float

    def __post_init__(self):
        _check_unit(self.q1, self.q2)

    @property
    def r1(self) -> float:
        return 1.0 - self.q1

    @property
    def r2(self) -> float:
        return 1.0 - self.q2

    @property
    def gamma(self) -> float:
        return 0.5 * math.log(self.q1 / self.q2)

    @property
    def eta(self) -> float:
        return 0.5 * math.log(self.q1 * self.q2 / (self.r1 * self.r2))

    @property
    def p(self) -> np.ndarray:
        return np.array([self.r2, self.r1]) / (self.r1 + self.r2)

    @property
    def transition(self) -> np.ndarray:
        return np.array([[self.q1, self.r1], [self.r2, self.q2]])


@dataclass(frozen=True)
class PairKSParams:
    q1: float
    q2: float
    q1_hat: float
    q2_hat: float

    def __post_init__(self):
        _check_unit(self.q1, self.q2, self.q1_hat, self.q2_hat)

    @property
    def r1(self):
        return 1.0 - self.q1

    @property
    def r2(self):
        return 1.0 - self.q2

    @property
    def r1_hat(self):
        return 1.0 - self.q1_hat

    @property
    def r2_hat(self):
        return 1.0 - self.q2_hat

    @property
    def gamma(self) -> float:
        return 0.5 * math.log(self.q1 / self.q2)

    @property
    def chi(self) -> float:
        return 0.5 * (abs(math.log(self.q1 / self.q2)) - abs(math.log(self.q1_hat / self.q2_hat)))

    @property
    def eta(self) -> float:
        return 0.5 * math.log(self.q1 * self.q2 * self.r1_hat * self.r2_hat
                              / (self.r1 * self.r2 * self.q1_hat * self.q2_hat))

    @property
    def delta(self) -> float:
        return 0.5 * math.log(self.r1 * self.r2 / (self.r1_hat * self.r2_hat))

    @property
    def rho(self) -> float:
        return 0.5 * math.log(self.q1 * self.q2 / (self.r1 * self.r2))


def ks_pmp(params: KSParams) -> PMPSpec:
    M_K = np.diag([params.q1, params.q2])
    M_S = np.array([[0.0, params.r1], [params.r2, 0.0]])
    return PMPSpec(KS_ALPHABET, {"K": M_K, "S": M_S}, params.p)


# ---------------------------------------------------------------- cumulant function


def _a_plus_minus(params: KSParams, lam) -> tuple[float, float]:
    l1, l2, l3 = (float(x) for x in lam)
    g, h = params.gamma, params.eta
    pref = (params.q1 * params.q2 * params.r1 * params.r2) ** 0.25
    common = math.exp(2 * l1 + h) * math.sinh(l2 + g) ** 2 + math.exp(-(2 * l1 + h)) * math.sinh(l3) ** 2
    a_plus = pref * math.sqrt(math.exp(2 * l1 + h) + common)
    a_minus = pref * math.sqrt(math.exp(-(2 * l1 + h)) + common)
    return a_plus, a_minus


def q_lambda(params: KSParams, lam) -> float:
    """Limiting cumulant generating function of (U_T, V_T, W_T)."""
    a_plus, a_minus = _a_plus_minus(params, lam)
    return math.log(a_plus + a_minus)


def deformed_pair_matrices(params: KSParams, lam):
    """Odd- and even-step tilted transition matrices."""
    l1, l2, l3 = (float(x) for x in lam)
    q1, q2, r1, r2 = params.q1, params.q2, params.r1, params.r2
    odd = np.array([[math.exp(l1 + l2) * q1, math.exp(-l1 - l3) * r1],
                    [math.exp(-l1 + l3) * r2, math.exp(l1 - l2) * q2]])
    even = np.array([[math.exp(l1 + l2) * q1, math.exp(-l1 + l3) * r1],
                     [math.exp(-l1 - l3) * r2, math.exp(l1 - l2) * q2]])
    return odd, even


def q_lambda_matrix(params: KSParams, lam) -> float:
    """Half the log dominant eigenvalue of the two-step tilted matrix."""
    odd, even = deformed_pair_matrices(params, lam)
    return 0.5 * math.log(spectral_radius(odd @ even).radius)


def q_finite(params: KSParams, lam, T: int) -> float:
    """(1/T) log E exp(lambda . X_T) from the tilted matrix products."""
    odd, even = deformed_pair_matrices(params, lam)
    v = params.p.copy()
    log_scale = 0.0
    for t in range(1, T + 1):
        v = v @ (odd if t % 2 else even)
        s = v.sum()
        v /= s
        log_scale += math.log(s)
    return log_scale / T


def q_gradient_zero(params: KSParams) -> np.ndarray:
    r1, r2 = params.r1, params.r2
    return np.array([r1 - 4 * r1 * r2 + r2, r2 - r1, 0.0]) / (r1 + r2)


def q_hessian_zero(params: KSParams) -> np.ndarray:
    q1, q2, r1, r2 = params.q1, params.q2, params.r1, params.r2
    H = np.array([
        [4 * (q1 * r2 ** 2 + q2 * r1 ** 2), 2 * (q1 - q2), 0.0],
        [2 * (q1 - q2), q1 + q2, 0.0],
        [0.0, 0.0, (r1 + r2) ** 2 / (q1 + q2)],
    ])
    return 4 * r1 * r2 / (r1 + r2) ** 3 * H


def numerical_hessian(f, x, h: float = 1e-4) -> np.ndarray:
    """Central-difference Hessian of a scalar function."""
    x = np.asarray(x, dtype=float)
    n = x.size
    H = np.zeros((n, n))
    E = np.eye(n) * h
    for i in range(n):
        for j in range(i, n):
            val = (f(x + E[i] + E[j]) - f(x + E[i] - E[j]) - f(x - E[i] + E[j])
                   + f(x - E[i] - E[j])) / (4 * h * h)
            H[i, j] = H[j, i] = val
    return H


def numerical_gradient(f, x, h: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    E = np.eye(x.size) * h
    return np.array([(f(x + e) - f(x - e)) / (2 * h) for e in E])


# ---------------------------------------------------------------- pressure and CLT


def ks_pressure(params: KSParams, alpha: float) -> float:
    """Exact entropic pressure e(alpha)."""
    g, h = params.gamma, params.eta
    return q_lambda(params, (-h * alpha, -g * min(alpha, 1.0), g * max(alpha, 0.0)))


def ks_pressure_matrix(params: KSParams, alpha: float) -> float:
    """e(alpha) through the spectral radius of the two-step tilted matrix."""
    g, h = params.gamma, params.eta
    return q_lambda_matrix(params, (-h * alpha, -g * min(alpha, 1.0), g * max(alpha, 0.0)))


def ks_second_derivatives(params: KSParams) -> dict:
    """One-sided second derivatives of e at 0 and 1 and their jump."""
    g, h = params.gamma, params.eta
    H = q_hessian_zero(params)
    right = np.array([-h, -g, g])
    left = np.array([-h, -g, 0.0])
    at_zero_plus = float(right @ H @ right)
    at_zero_minus = float(left @ H @ left)
    return {
        "zero_plus": at_zero_plus,
        "zero_minus": at_zero_minus,
        "one_minus": at_zero_plus,
        "one_plus": at_zero_minus,
        "jump": at_zero_plus - at_zero_minus,
        "jump_closed_form": ks_jump(params),
    }


def ks_jump(params: KSParams) -> float:
    r1, r2, q1, q2 = params.r1, params.r2, params.q1, params.q2
    return 4 * r1 * r2 / ((q1 + q2) * (r1 + r2)) * params.gamma ** 2


def ks_ep_and_clt(params: KSParams) -> dict:
    """Entropy production and the variances of the limit law Z_1 - |Z_2|."""
    q1, q2, r1, r2 = params.q1, params.q2, params.r1, params.r2
    g, h = params.gamma, params.eta
    ep = ((r2 - r1) * g + (r1 - 4 * r1 * r2 + r2) * h) / (r1 + r2)
    var_z1 = 4 * r1 * r2 / (r1 + r2) ** 3 * (
        (q1 + q2) * g ** 2 + 4 * (q1 - q2) * g * h + 4 * (q1 * r2 ** 2 + q2 * r1 ** 2) * h ** 2)
    var_z2 = ks_jump(params)
    if q1 != q2 and not ep > 0:
        raise ArithmeticError("entropy production must be positive when q1 != q2")
    return {"ep": float(ep), "VarZ1": float(var_z1), "VarZ2": float(var_z2), "jump": float(var_z2)}


def limit_law_mean(var_z2: float) -> float:
    """E[Z_1 - |Z_2|] = -sqrt(2 Var(Z_2) / pi)."""
    return -math.sqrt(2 * var_z2 / math.pi)


def limit_law_cdf_point(x: float, var_z1: float, var_z2: float) -> float:
    """P(Z_1 - |Z_2| <= x) by quadrature over the folded Gaussian |Z_2|."""
    s1, s2 = math.sqrt(var_z1), math.sqrt(var_z2)

    def integrand(y):
        return 2 * scipy.stats.norm.pdf(y, scale=s2) * scipy.stats.norm.cdf((x + y) / s1)

    val, _ = scipy.integrate.quad(integrand, 0, np.inf, epsabs=1e-12, epsrel=1e-10)
    return float(val)


class LimitLawCDF:
    """Tabulated CDF of Z_1 - |Z_2| with cubic interpolation between quadrature nodes."""

    def __init__(self, var_z1: float, var_z2: float, n_nodes: int = 2001):
        scale = math.sqrt(var_z1 + var_z2)
        self.lo = -10 * scale - 3 * math.sqrt(var_z2)
        self.hi = 10 * scale
        self.nodes = np.linspace(self.lo, self.hi, n_nodes)
        vals = np.array([limit_law_cdf_point(x, var_z1, var_z2) for x in self.nodes])
        self.spline = scipy.interpolate.CubicSpline(self.nodes, vals)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = self.spline(np.clip(x, self.lo, self.hi))
        out = np.where(x <= self.lo, 0.0, np.where(x >= self.hi, 1.0, out))
        return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------- FM trajectories


@dataclass
class TrajectoryStats:
    """Transition counts of hidden trajectories xi_1..xi_{T+1}, one row per trajectory."""

    T: int
    n_pp: np.ndarray
    n_mm: np.ndarray
    n_pm: np.ndarray
    n_mp: np.ndarray
    delta_pm: np.ndarray  # even minus odd count of (+,-) steps
    delta_mp: np.ndarray
    first: np.ndarray  # xi_1 (0 for +, 1 for -)
    n_pp_odd: np.ndarray
    n_mm_odd: np.ndarray

    @property
    def U(self) -> np.ndarray:
        return self.n_pp + self.n_mm - self.n_pm - self.n_mp

    @property
    def V(self) -> np.ndarray:
        return self.n_pp - self.n_mm

    @property
    def W(self) -> np.ndarray:
        return self.delta_pm - self.delta_mp

    def check(self) -> None:
        total = self.n_pp + self.n_mm + self.n_pm + self.n_mp
        if np.any(total != self.T) or np.any(np.abs(self.n_pm - self.n_mp) > 1):
            raise AssertionError("inconsistent transition counts")


def trajectory_stats(xs: np.ndarray) -> TrajectoryStats:
    """Counts from an (N, T+1) array of hidden states."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.int8))
    a, b = xs[:, :-1], xs[:, 1:]
    T = a.shape[1]
    odd = (np.arange(1, T + 1) % 2 == 1)[None, :]
    pp = (a == 0) & (b == 0)
    mm = (a == 1) & (b == 1)
    pm = (a == 0) & (b == 1)
    mp = (a == 1) & (b == 0)
    return TrajectoryStats(
        T,
        np.sum(pp, axis=1),
        np.sum(mm, axis=1),
        np.sum(pm, axis=1),
        np.sum(mp, axis=1),
        np.sum(pm & ~odd, axis=1) - np.sum(pm & odd, axis=1),
        np.sum(mp & ~odd, axis=1) - np.sum(mp & odd, axis=1),
        xs[:, 0].astype(np.int64),
        np.sum(pp & odd, axis=1),
        np.sum(mm & odd, axis=1),
    )


def _log_cosh(x):
    x = np.abs(x)
    return x + np.log1p(np.exp(-2 * x)) - math.log(2)


def sigma_fm(params: KSParams, st: TrajectoryStats) -> np.ndarray:
    """sigma_T from transition counts via the hyperbolic-cosine expression."""
    q1, q2, r1, r2 = params.q1, params.q2, params.r1, params.r2
    g = params.gamma
    log_ratio_p = {0: math.log(r2 / r1), 1: math.log(r1 / r2)}  # log p_x / p_{bar x}
    lr = math.log(r1 / r2)
    first_ratio = np.where(st.first == 0, log_ratio_p[0], log_ratio_p[1])
    delta_xi = 0.5 * ((st.n_pm - st.n_mp) * lr + first_ratio)
    # psi flips the odd positions, so psi(xi)_1 is the opposite of xi_1
    psi_pm = st.n_mm_odd + (st.n_pp - st.n_pp_odd)
    psi_mp = st.n_pp_odd + (st.n_mm - st.n_mm_odd)
    delta_psi = 0.5 * ((psi_pm - psi_mp) * lr - first_ratio)
    return (0.5 * math.log(q1 * q2 / (r1 * r2)) * st.U
            + _log_cosh(g * st.V + delta_xi) - _log_cosh(g * st.W + delta_psi))


def sigma_asymptotic(params: KSParams, st: TrajectoryStats) -> np.ndarray:
    """eta U_T + gamma (|V_T| - |W_T|)."""
    return params.eta * st.U + params.gamma * (np.abs(st.V) - np.abs(st.W))


def fm_log_prob(params: KSParams, xs: np.ndarray) -> np.ndarray:
    """log P([F(xi)]) = log(Q[xi] + Q[bar xi]) for rows of hidden states."""
    st = trajectory_stats(xs)
    lq1, lq2, lr1, lr2 = (math.log(v) for v in (params.q1, params.q2, params.r1, params.r2))
    lp = np.log(params.p)
    own = lp[st.first] + st.n_pp * lq1 + st.n_mm * lq2 + st.n_pm * lr1 + st.n_mp * lr2
    bar = lp[1 - st.first] + st.n_mm * lq1 + st.n_pp * lq2 + st.n_mp * lr1 + st.n_pm * lr2
    return np.logaddexp(own, bar)


def hidden_path(word: Sequence[str], start: int = 0) -> np.ndarray:
    """The preimage xi of a K/S word with xi_1 = start."""
    xs = [start]
    for a in word:
        xs.append(xs[-1] if a == "K" else 1 - xs[-1])
    return np.array(xs, dtype=np.int8)


def psi_map(xs: np.ndarray) -> np.ndarray:
    """Flip the states at odd positions (1-based)."""
    xs = np.array(xs, dtype=np.int8, copy=True)
    xs[..., 0::2] = 1 - xs[..., 0::2]
    return xs


def sigma_three_ways(params: KSParams, words: Sequence[Sequence[str]]) -> dict:
    """sigma_T by PMP products, by the count formula, and its asymptotic form."""
    spec = ks_pmp(params)
    direct = np.array([spec.rep.log_prob(w) - spec.rep.log_prob([KS_THETA[a] for a in w])
                       for w in words])
    xs = np.array([hidden_path(w) for w in words], dtype=np.int8)
    fm = sigma_fm(params, trajectory_stats(xs))
    via_fm_probs = fm_log_prob(params, xs) - fm_log_prob(params, psi_map(xs))
    asym = sigma_asymptotic(params, trajectory_stats(xs))
    return {"direct": direct, "fm": fm, "fm_probabilities": via_fm_probs, "asymptotic": asym}


def _stream(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


def simulate_hidden(params: KSParams, T: int, indices: Sequence[int], seed: int) -> np.ndarray:
    """Stationary hidden trajectories xi_1..xi_{T+1}, one keyed stream per trajectory."""
    u = np.empty((len(indices), T + 1))
    for row, idx in enumerate(indices):
        u[row] = _stream(seed, int(idx)).random(T + 1)
    xs = np.empty(u.shape, dtype=np.int8)
    state = (u[:, 0] >= params.p[0]).astype(np.int8)
    xs[:, 0] = state
    keep = np.array([params.q1, params.q2])
    for t in range(1, T + 1):
        state = state ^ (u[:, t] >= keep[state]).astype(np.int8)
        xs[:, t] = state
    return xs


def _sample_chunk(args):
    q1, q2, T, lo, hi, seed = args
    params = KSParams(q1, q2)
    xs = simulate_hidden(params, T, range(lo, hi), seed)
    st = trajectory_stats(xs)
    sig = sigma_fm(params, st)
    return sig, np.stack([st.U, st.V, st.W])


@dataclass
class CLTSample:
    standardized: np.ndarray
    sigma: np.ndarray
    U: np.ndarray
    V: np.ndarray
    W: np.ndarray
    T: int
    ep: float

    def summary(self) -> dict:
        n = self.standardized.size
        return {"T": self.T, "N": n, "mean": float(np.mean(self.standardized)),
                "std_error": float(np.std(self.standardized, ddof=1) / math.sqrt(n)),
                "mean_sigma_rate": float(np.mean(self.sigma) / self.T)}


def ks_clt_sampler(params: KSParams, T: int, N: int, seed: int = 0, workers: int = 1,
                   chunk: int = DEFAULT_CHUNK) -> CLTSample:
    """Sample (sigma_T - T ep)/sqrt(T) through the hidden-chain representation."""
    if T < 1 or N < 1:
        raise KSParameterError("T and N must be positive")
    if not 0 <= seed < 2 ** 64:
        raise KSParameterError("seed must be an unsigned 64-bit integer")
    ep = ks_ep_and_clt(params)["ep"]
    jobs = [(params.q1, params.q2, T, lo, min(lo + chunk, N), seed) for lo in range(0, N, chunk)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sample_chunk, jobs))
    else:
        results = [_sample_chunk(j) for j in jobs]
    sigma = np.concatenate([r[0] for r in results])
    uvw = np.concatenate([r[1] for r in results], axis=1)
    return CLTSample((sigma - T * ep) / math.sqrt(T), sigma, uvw[0], uvw[1], uvw[2], T, ep)


def ks_goodness_of_fit(sample: np.ndarray, var_z1: float, var_z2: float, level: float = 0.01) -> dict:
    """Kolmogorov-Smirnov distance to the law of Z_1 - |Z_2| and its critical value."""
    cdf = LimitLawCDF(var_z1, var_z2)
    res = scipy.stats.kstest(sample, cdf)
    critical = float(scipy.stats.kstwo.ppf(1 - level, sample.size))
    return {"statistic": float(res.statistic), "critical": critical, "pvalue": float(res.pvalue),
            "passes": bool(res.statistic < critical)}


# ---------------------------------------------------------------- pair of Keep-Switch measures


def pair_q(params: PairKSParams, lam) -> float:
    l1, l2 = (float(x) for x in lam)
    s = math.sinh(l2 + params.gamma)
    return (0.5 * math.log(params.q1 * params.q2) + l1
            + math.log(math.cosh(l2 + params.gamma) + math.sqrt(s * s + math.exp(-2 * (l1 + params.rho)))))


def pair_q_matrix(params: PairKSParams, lam) -> float:
    l1, l2 = (float(x) for x in lam)
    P = np.array([[math.exp(l1 + l2) * params.q1, params.r1],
                  [params.r2, math.exp(l1 - l2) * params.q2]])
    return math.log(spectral_radius(P).radius)


def pair_pressure(params: PairKSParams, alpha: float) -> float:
    g = params.gamma
    sign = 1.0 if g >= 0 else -1.0
    return -params.delta * alpha + pair_q(params, (-params.eta * alpha,
                                                   -sign * min(abs(g), alpha * params.chi)))


def pair_ks(params: PairKSParams) -> dict:
    """Entropy production, pressure and CLT classification for two Keep-Switch measures."""
    q1, q2, r1, r2 = params.q1, params.q2, params.r1, params.r2
    g, c, h, d = params.gamma, params.chi, params.eta, params.delta
    ep = d + (r1 - 2 * r1 * r2 + r2) / (r1 + r2) * h + abs(r1 - r2) / (r1 + r2) * c
    out = {"ep": float(ep), "pressure": lambda a: pair_pressure(params, a),
           "gamma": g, "chi": c, "eta": h, "delta": d}
    if c == 0 or g != 0:
        var = 4 * r1 * r2 / (r1 + r2) ** 3 * ((q1 * r2 ** 2 + q2 * r1 ** 2) * h ** 2
                                              + 2 * abs(r2 - r1) * h * c + (q1 + q2) * c ** 2)
        out.update(clt_case="gaussian", variances={"Z": float(var)})
    else:
        out.update(clt_case="Z1-|Z2|", variances={"Z1": float(q1 * r1 * h ** 2),
                                                  "Z2": float(q1 / r1 * c ** 2)})
    return out


def ks_entropy_rate(params: KSParams) -> float:
    """Specific entropy (r1 S2 + r2 S1)/(r1 + r2)."""
    def binary(q):
        return -q * math.log(q) - (1 - q) * math.log(1 - q)

    return (params.r1 * binary(params.q2) + params.r2 * binary(params.q1)) / (params.r1 + params.r2)


def entropy_rate_from_pair(params: KSParams) -> float:
    """log 2 minus the entropy production against the symmetric Bernoulli measure."""
    pair = PairKSParams(params.q1, params.q2, 0.5, 0.5)
    return math.log(2) - pair_ks(pair)["ep"]


# ---------------------------------------------------------------- fluctuation-dissipation


@dataclass
class FDRReport:
    T_list: list
    D_T: dict
    L_T: dict
    D_inf: np.ndarray
    L_inf: np.ndarray
    step: float

    def as_dict(self) -> dict:
        return {"T_list": self.T_list, "step": self.step,
                "D_T": {T: m.tolist() for T, m in self.D_T.items()},
                "L_T": {T: m.tolist() for T, m in self.L_T.items()},
                "D_inf": self.D_inf.tolist(), "L_inf": self.L_inf.tolist()}


def _eps_matrices(eps):
    e1, e2 = eps
    q1, q2, r1, r2 = 0.5 - e1, 0.5 - e2, 0.5 + e1, 0.5 + e2
    mats = {"K": np.diag([q1, q2]), "S": np.array([[0.0, r1], [r2, 0.0]])}
    d_mats = {"K": [np.diag([-1.0, 0.0]), np.diag([0.0, -1.0])],
              "S": [np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([[0.0, 0.0], [1.0, 0.0]])]}
    s = r1 + r2
    p = np.array([r2, r1]) / s
    d_p = [np.array([-r2, s - r1]) / s ** 2, np.array([s - r2, -r1]) / s ** 2]
    return mats, d_mats, p, d_p


def _all_words(T: int) -> np.ndarray:
    return np.array(list(itertools.product((0, 1), repeat=T)), dtype=np.int8).reshape(-1, T)


def _prob_and_gradient(words: np.ndarray, eps) -> tuple[np.ndarray, np.ndarray]:
    """P^(eps)(w) and its eps-gradient for every row of ``words`` (0 = K, 1 = S)."""
    mats, d_mats, p, d_p = _eps_matrices(eps)
    M = np.array([mats["K"], mats["S"]])
    dM = np.array([d_mats["K"], d_mats["S"]])  # (symbol, component, 2, 2)
    n = words.shape[0]
    v = np.tile(p, (n, 1))
    dv = np.tile(np.array(d_p)[None], (n, 1, 1))  # (n, component, 2)
    for t in range(words.shape[1]):
        sym = words[:, t]
        Ms = M[sym]
        new_v = np.einsum("ni,nij->nj", v, Ms)
        new_dv = np.einsum("nki,nij->nkj", dv, Ms) + np.einsum("ni,nkij->nkj", v, dM[sym])
        v, dv = new_v, new_dv
    return v.sum(axis=1), dv.sum(axis=2)


def sigma_gradient(words: np.ndarray, eps) -> np.ndarray:
    """Gradient in eps of sigma_T(w) = log P(w) - log P(theta(w))."""
    P, dP = _prob_and_gradient(words, eps)
    Ph, dPh = _prob_and_gradient(1 - words, eps)
    return dP / P[:, None] - dPh / Ph[:, None]


def current(words: np.ndarray, eps, nodes: int = 24) -> np.ndarray:
    """J_T^(eps) = int_0^1 grad sigma_T(lambda eps) d lambda by Gauss-Legendre quadrature."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    lam = 0.5 * (x + 1)
    w = 0.5 * w
    eps = np.asarray(eps, dtype=float)
    return sum(wi * sigma_gradient(words, li * eps) for li, wi in zip(lam, w))


def mean_current(T: int, eps) -> np.ndarray:
    words = _all_words(T)
    P, _ = _prob_and_gradient(words, eps)
    return P @ current(words, eps) / T


def onsager_finite(T: int, step: float = 1e-4, eps=(0.0, 0.0)) -> np.ndarray:
    """L_T = d/d eps of the mean current, by central differences."""
    eps = np.asarray(eps, dtype=float)
    L = np.zeros((2, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = step
        L[:, j] = (mean_current(T, eps + e) - mean_current(T, eps - e)) / (2 * step)
    return L


def diffusion_finite(T: int) -> np.ndarray:
    """D_T = E(J_T J_T^T)/T at equilibrium from the binomial law of the switch count."""
    k = np.arange(T + 1)
    weights = np.array([math.comb(T, int(i)) for i in k], dtype=float) / 2.0 ** T
    second = float(np.sum(weights * (2 * (2 * k - T)) ** 2))
    return second / T * np.ones((2, 2))


def diffusion_enumerated(T: int) -> np.ndarray:
    words = _all_words(T)
    P, _ = _prob_and_gradient(words, (0.0, 0.0))
    J = sigma_gradient(words, (0.0, 0.0))
    return np.einsum("n,ni,nj->ij", P, J, J) / T


def ep_of_force(eps) -> float:
    e1, e2 = eps
    return ks_ep_and_clt_any(0.5 - e1, 0.5 - e2)


def ks_ep_and_clt_any(q1: float, q2: float) -> float:
    """Closed-form entropy production, also valid at q1 = q2."""
    r1, r2 = 1 - q1, 1 - q2
    g = 0.5 * math.log(q1 / q2)
    h = 0.5 * math.log(q1 * q2 / (r1 * r2))
    return ((r2 - r1) * g + (r1 - 4 * r1 * r2 + r2) * h) / (r1 + r2)


def onsager_infinite(step: float = 1e-3) -> np.ndarray:
    """L_inf as half the Hessian of the closed-form entropy production at eps = 0."""
    coarse = numerical_hessian(ep_of_force, np.zeros(2), step)
    fine = numerical_hessian(ep_of_force, np.zeros(2), step / 2)
    return 0.5 * (fine + (fine - coarse) / 3)


def fdr_compute(T_list: Sequence[int] = (4, 8, 12), step: float = 1e-4,
                max_T: int = 16) -> FDRReport:
    """Finite-time Onsager and diffusion matrices together with their infinite-time limits."""
    if any(T < 1 or T > max_T for T in T_list):
        raise KSParameterError(f"exact enumeration is limited to 1 <= T <= {max_T}")
    if not 0 < step < 0.1:
        raise KSParameterError("finite-difference step must lie in ]0, 0.1[")
    D = {T: diffusion_finite(T) for T in T_list}
    L = {T: onsager_finite(T, step) for T in T_list}
    return FDRReport(list(T_list), D, L, diffusion_finite(max(T_list)), onsager_infinite(), step)
