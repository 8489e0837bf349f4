"""Entropy production, entropic pressure, rate functions and related diagnostics.

Measures are passed as objects exposing a ``rep`` (Instrument, PMPSpec) or as
raw LinearRep values.  The reversed measure is usually built with
``reversal_pair``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np
import scipy.optimize

from . import linrep
from .instrument import Instrument, or_instrument
from .numerics import legendre_transform, spectral_radius
from .pmp import PMPSpec, or_pmp

PRESSURE_CEILING = 50.0


class AssumptionBViolation(ValueError):
    """A word charged by P has zero mass under the reversed measure."""


class MissingLabelsError(ValueError):
    """The entropy increments Delta S are required but absent."""


def rep_of(obj) -> linrep.LinearRep:
    if isinstance(obj, linrep.LinearRep):
        return obj
    if hasattr(obj, "rep"):
        return obj.rep
    raise TypeError(f"cannot evaluate word probabilities of {type(obj).__name__}")


def reversal_pair(obj, theta: Mapping | None = None):
    """(P, Phat) representations for an instrument or a PMP spec with involution."""
    if isinstance(obj, Instrument):
        return obj.rep, or_instrument(obj).rep
    if isinstance(obj, PMPSpec):
        if theta is None:
            raise ValueError("a PMP spec needs an alphabet involution")
        return obj.rep, or_pmp(obj, theta).rep
    raise TypeError(f"cannot build a reversal pair for {type(obj).__name__}")


# ---------------------------------------------------------------- sigma_T


def sigma_T(P, Phat, word: Sequence) -> float:
    """log P_T(w) - log Phat_T(w) for w in the support of P_T."""
    rp, rh = rep_of(P), rep_of(Phat)
    if not rp.in_support(word):
        raise ValueError("word is outside the support of P")
    lh = rh.log_prob(word)
    if not np.isfinite(lh):
        raise AssumptionBViolation("word has zero mass under the reversed measure")
    return rp.log_prob(word) - lh


def _combine(lp: np.ndarray, lh: np.ndarray, alpha: float) -> np.ndarray:
    """(1-alpha) log P + alpha log Phat with the conventions 0^0 = 1, 0^neg = inf."""
    if alpha == 0.0:
        return lp.copy()
    with np.errstate(invalid="ignore"):
        out = (1.0 - alpha) * lp + alpha * lh
    out = np.where(np.isneginf(lh), -np.inf if alpha > 0 else np.inf, out)
    return out


class _Accumulator:
    """Streaming log-sum-exp with deterministic chunk order."""

    def __init__(self, n: int):
        self.m = np.full(n, -np.inf)
        self.s = np.zeros(n)

    def add(self, terms: np.ndarray):  # terms: (n, N)
        cm = np.max(terms, axis=1, initial=-np.inf)
        new_m = np.maximum(self.m, cm)
        finite = np.isfinite(new_m)
        with np.errstate(invalid="ignore", over="ignore"):
            scale_old = np.where(finite, np.exp(self.m - np.where(finite, new_m, 0)), 0.0)
            chunk = np.where(finite[:, None],
                             np.exp(terms - np.where(finite, new_m, 0)[:, None]), 0.0)
        self.s = np.where(finite, self.s * scale_old + chunk.sum(axis=1), self.s)
        self.m = np.where(np.isposinf(cm), np.inf, new_m)

    def value(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.where(np.isposinf(self.m), np.inf,
                            np.where(self.s > 0, self.m + np.log(np.where(self.s > 0, self.s, 1)),
                                     -np.inf))


def finite_pressure_grid(P, Phat, alphas: Sequence[float], T: int,
                         budget: int = linrep.DEFAULT_BUDGET) -> np.ndarray:
    """e_T(alpha) = log sum over supp P_T of P_T^(1-alpha) Phat_T^alpha, for each alpha."""
    alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
    acc = _Accumulator(alphas.size)
    for _, (lp, lh) in linrep.enumerate_words([rep_of(P), rep_of(Phat)], T, budget=budget):
        acc.add(np.stack([_combine(lp, lh, a) for a in alphas]))
    return acc.value()


def finite_pressure(P, Phat, alpha: float, T: int, budget: int = linrep.DEFAULT_BUDGET) -> float:
    return float(finite_pressure_grid(P, Phat, [alpha], T, budget)[0])


def mean_sigma(P, Phat, T: int, budget: int = linrep.DEFAULT_BUDGET) -> float:
    """E_P(sigma_T), the relative entropy of P_T with respect to Phat_T."""
    total = 0.0
    for _, (lp, lh) in linrep.enumerate_words([rep_of(P), rep_of(Phat)], T, budget=budget):
        if np.any(np.isneginf(lh) & np.isfinite(lp)):
            return np.inf
        w = np.exp(lp)
        total += float(np.sum(w * (lp - lh)))
    return total


@dataclass
class PressureVerdict:
    values: np.ndarray  # e_T / T along T_list
    T_list: list
    infinite: bool
    note: str = ""


def finite_pressure_sequence(P, Phat, alpha: float, T_list: Sequence[int],
                             ceiling: float = PRESSURE_CEILING,
                             budget: int = linrep.DEFAULT_BUDGET) -> PressureVerdict:
    """e_T(alpha)/T along T_list, with a numerical divergence verdict."""
    vals = np.array([finite_pressure(P, Phat, alpha, T, budget) / T for T in T_list])
    increasing = bool(np.all(np.diff(vals) > 0))
    infinite = bool(np.isposinf(vals).any() or (vals[-1] > ceiling and increasing))
    note = "numerical verdict: e_T/T above ceiling and increasing" if infinite else ""
    return PressureVerdict(vals, list(T_list), infinite, note)


# ---------------------------------------------------------------- spectral pressure


def deformed_transfer(source, alpha: float, delta_S: Mapping | None = None) -> np.ndarray:
    """Phi(alpha) = sum_a exp(-alpha dS(a)) Phi_a (superoperator or PMP matrix)."""
    if isinstance(source, Instrument):
        labels = delta_S if delta_S is not None else source.delta_S
        if labels is None:
            raise MissingLabelsError("the instrument carries no Delta S labels")
        return sum(np.exp(-alpha * labels[a]) * source.maps[a].super for a in source.alphabet)
    if isinstance(source, PMPSpec):
        if delta_S is None:
            raise MissingLabelsError("a PMP spec needs Delta S labels")
        return sum(np.exp(-alpha * delta_S[a]) * source.matrices[a] for a in source.alphabet)
    raise TypeError(f"unsupported source {type(source).__name__}")


def pressure_spectral(source, alpha, delta_S: Mapping | None = None):
    """log of the spectral radius of Phi(alpha); vectorized over alpha."""
    alphas = np.atleast_1d(np.asarray(alpha, dtype=float))
    out = np.empty(alphas.size)
    for i, a in enumerate(alphas):
        M = deformed_transfer(source, a, delta_S)
        if isinstance(source, Instrument):
            start = np.eye(source.dim).ravel()
        else:
            start = np.ones(M.shape[0])
        out[i] = np.log(spectral_radius(M, cone_start=start).radius)
    return out if np.ndim(alpha) else float(out[0])


# ---------------------------------------------------------------- entropy production


class EPResult(NamedTuple):
    value: float
    method: str
    evidence: tuple = ()


def ep_two_time(source, delta_S: Mapping | None = None) -> float:
    """sum_a dS(a) P(a), the mean entropy increment per step."""
    if isinstance(source, Instrument):
        labels = delta_S if delta_S is not None else source.delta_S
        if labels is None:
            raise MissingLabelsError("the instrument carries no Delta S labels")
        d = source.dim
        return float(sum(labels[a] * np.trace(source.rho @ source.maps[a](np.eye(d))).real
                         for a in source.alphabet))
    if isinstance(source, PMPSpec):
        if delta_S is None:
            raise MissingLabelsError("a PMP spec needs Delta S labels")
        one = np.ones(source.dim)
        return float(sum(delta_S[a] * source.p @ source.matrices[a] @ one
                         for a in source.alphabet))
    raise TypeError(f"unsupported source {type(source).__name__}")


def derivative_richardson(f: Callable[[float], float], x: float, h: float = 1e-3,
                          levels: int = 4) -> float:
    """Central-difference derivative refined by Richardson extrapolation."""
    table = [[(f(x + h / 2 ** i) - f(x - h / 2 ** i)) / (2 * h / 2 ** i)] for i in range(levels)]
    for j in range(1, levels):
        for i in range(j, levels):
            prev = table[i][j - 1]
            table[i].append(prev + (prev - table[i - 1][j - 1]) / (4 ** j - 1))
    return table[-1][-1]


def one_sided_derivative(f: Callable[[float], float], x: float, side: int,
                         h: float = 1e-4, levels: int = 4) -> float:
    """One-sided first derivative (side=+1 right, -1 left) with Richardson refinement."""
    def fd(step):
        return side * (-3 * f(x) + 4 * f(x + side * step) - f(x + 2 * side * step)) / (2 * step)

    table = [[fd(h / 2 ** i)] for i in range(levels)]
    for j in range(1, levels):
        for i in range(j, levels):
            prev = table[i][j - 1]
            table[i].append(prev + (prev - table[i - 1][j - 1]) / (2 ** (j + 1) - 1))
    return table[-1][-1]


def one_sided_second_derivative(f: Callable[[float], float], x: float, side: int,
                                h: float = 1e-3) -> float:
    """Fourth-order one-sided second derivative from five points on one side."""
    c = np.array([35.0, -104.0, 114.0, -56.0, 11.0]) / 12.0
    vals = np.array([f(x + side * k * h) for k in range(5)])
    return float(c @ vals / h ** 2)


def entropy_production(source, pressure: Callable[[float], float] | None = None,
                       P=None, Phat=None, T_list: Sequence[int] = (8, 10, 12),
                       delta_S: Mapping | None = None, h: float = 1e-5,
                       budget: int = linrep.DEFAULT_BUDGET, side: int = 0) -> EPResult:
    """Mean entropy production rate.

    Two-time sources use the Delta S average.  Otherwise the derivative
    -e'(0) of a supplied pressure is used (central difference refined by
    Richardson extrapolation, starting from step ``h``, or a one-sided rule when
    ``side`` is +1 or -1 for pressures whose second derivative jumps at 0); failing that, the slope
    of E(sigma_T) over ``T_list`` by enumeration.
    """
    labels = delta_S if delta_S is not None else getattr(source, "delta_S", None)
    if source is not None and labels is not None:
        return EPResult(ep_two_time(source, labels), "two-time average")
    if pressure is not None:
        if side:
            return EPResult(-one_sided_derivative(pressure, 0.0, side, h=max(h, 1e-4)),
                            "one-sided pressure derivative")
        return EPResult(-derivative_richardson(pressure, 0.0, h=max(h, 1e-3)),
                        "pressure derivative")
    if P is None or Phat is None:
        P, Phat = reversal_pair(source)
    means = np.array([mean_sigma(P, Phat, T, budget) for T in T_list])
    if np.isposinf(means).any():
        return EPResult(np.inf, "enumeration", tuple(means))
    slope = np.polyfit(np.asarray(T_list, float), means, 1)[0]
    incs = np.diff(means) / np.diff(T_list)
    if incs.size >= 2 and np.all(np.diff(incs) > 0) and incs[-1] > PRESSURE_CEILING:
        return EPResult(np.inf, "enumeration (divergent)", tuple(means))
    return EPResult(float(slope), "enumeration slope", tuple(means))


def relative_entropy(A: np.ndarray, B: np.ndarray) -> float:
    """Umegaki relative entropy tr A (log A - log B) of positive definite matrices."""
    def logm(X):
        w, v = np.linalg.eigh(0.5 * (X + X.conj().T))
        return (v * np.log(w)) @ v.conj().T

    return float(np.trace(A @ (logm(A) - logm(B))).real)


def ep_relative_entropy(rho: np.ndarray, rho_probe: np.ndarray, U: np.ndarray,
                        probe_first: bool = True) -> float:
    """S(mu | U^* mu U) with mu the product of system and probe states."""
    mu = np.kron(rho_probe, rho) if probe_first else np.kron(rho, rho_probe)
    return relative_entropy(mu, U.conj().T @ mu @ U)


# ---------------------------------------------------------------- curves


@dataclass
class PressureCurve:
    alphas: np.ndarray
    values: np.ndarray
    d_left: np.ndarray
    d_right: np.ndarray
    func: Callable[[float], float] | None = field(default=None, repr=False)

    def convexity_defect(self) -> float:
        """Most negative normalized second difference (0 when convex)."""
        a, v = self.alphas, self.values
        finite = np.isfinite(v)
        a, v = a[finite], v[finite]
        if a.size < 3:
            return 0.0
        slopes = np.diff(v) / np.diff(a)
        return float(min(0.0, np.min(np.diff(slopes), initial=0.0)))

    def to_rows(self):
        return [("alpha", "value", "d_left", "d_right")] + [
            (a, v, l, r) for a, v, l, r in zip(self.alphas, self.values, self.d_left, self.d_right)]


def pressure_curve(func: Callable[[float], float], alphas: Sequence[float],
                   h: float = 1e-6) -> PressureCurve:
    alphas = np.asarray(sorted(alphas), dtype=float)
    vals = np.array([func(a) for a in alphas])
    dl = np.array([(func(a) - func(a - h)) / h for a in alphas])
    dr = np.array([(func(a + h) - func(a)) / h for a in alphas])
    return PressureCurve(alphas, vals, dl, dr, func)


@dataclass
class RateFunction:
    s: np.ndarray
    values: np.ndarray
    gc_residual: np.ndarray
    local: bool = False

    def to_rows(self):
        return [("s", "value", "gc_residual")] + list(zip(self.s, self.values, self.gc_residual))


def rate_function(curve: PressureCurve, s_grid: Sequence[float] | None = None) -> RateFunction:
    """I(s) = sup_alpha (alpha s - e(-alpha)); +inf beyond the covered slope range."""
    finite = np.isfinite(curve.values)
    local = not finite.all()
    fa = curve.alphas[finite]
    lo, hi = float(fa[0]), float(fa[-1])
    if s_grid is None:
        slopes = -np.concatenate([curve.d_left[finite], curve.d_right[finite]])
        s_grid = np.linspace(np.min(slopes), np.max(slopes), 41)
    s_grid = np.asarray(s_grid, dtype=float)

    def I(s):
        if curve.func is not None:
            res = legendre_transform(lambda a: curve.func(-a), s, -hi, -lo)
        else:
            res = legendre_transform((-fa[::-1], curve.values[finite][::-1]), s)
        return np.inf if res.boundary else res.value

    vals = np.array([I(s) for s in s_grid])
    mirror = np.array([I(-s) for s in s_grid])
    with np.errstate(invalid="ignore"):
        resid = np.where(np.isfinite(vals) & np.isfinite(mirror), mirror - vals - s_grid, np.nan)
    return RateFunction(s_grid, vals, resid, local)


# ---------------------------------------------------------------- error exponents


@dataclass
class ErrorExponents:
    stein: float
    chernoff: float
    chernoff_alpha: float
    hoeffding: Callable[[float], float]
    chernoff_finite_T: dict


def chernoff_finite(P, Phat, T: int, budget: int = linrep.DEFAULT_BUDGET) -> float:
    """(1/T) log[(2 - sum |P_T - Phat_T|)/4] by enumeration."""
    tv = 0.0
    hat_mass = 0.0
    for _, (lp, lh) in linrep.enumerate_words([rep_of(P), rep_of(Phat)], T, budget=budget):
        p, q = np.exp(lp), np.exp(lh)
        tv += float(np.sum(np.abs(p - q)))
        hat_mass += float(np.sum(q))
    tv += max(0.0, 1.0 - hat_mass)
    return float(np.log(max(2.0 - tv, 1e-300) / 4.0) / T)


def error_exponents(P, Phat, pressure: Callable[[float], float], ep: float,
                    T_list: Sequence[int] = (), budget: int = linrep.DEFAULT_BUDGET
                    ) -> ErrorExponents:
    """Stein, Chernoff and Hoeffding exponents of the pair (P, Phat), in that order."""
    res = scipy.optimize.minimize_scalar(pressure, bounds=(0.0, 1.0), method="bounded",
                                         options={"xatol": 1e-10})
    cands = [(float(res.fun), float(res.x)), (pressure(0.0), 0.0), (pressure(1.0), 1.0)]
    chern, chern_a = min(cands)

    def hoeffding(s: float) -> float:
        g = lambda a: ((1 - a) * s + pressure(a)) / a
        r = scipy.optimize.minimize_scalar(g, bounds=(1e-9, 1.0), method="bounded",
                                           options={"xatol": 1e-10})
        return float(min(r.fun, g(1.0)))

    finite = {T: chernoff_finite(P, Phat, T, budget) for T in T_list}
    return ErrorExponents(-ep, chern, chern_a, hoeffding, finite)


# ---------------------------------------------------------------- weak Gibbs


def log_prob_table(rep: linrep.LinearRep, T: int, budget: int = linrep.DEFAULT_BUDGET):
    """log P of every word of length L <= T, indexed lexicographically in base k.

    Returns a list whose L-th entry has k^L values (index 0 holds the empty word).
    """
    k = len(rep.alphabet)
    if sum(k ** L for L in range(T + 1)) > budget:
        raise linrep.BudgetExceededError("probability table exceeds the budget")
    tables = [np.zeros(1)]
    v = rep.init[None, :].astype(np.result_type(rep.init, rep.mats))
    pat = rep.init_pattern[None, :].astype(np.int32)
    logs = np.zeros(1)
    pats_mat = rep.mat_patterns.astype(np.int32)
    for _ in range(T):
        v = np.einsum("ni,aij->naj", v, rep.mats).reshape(-1, rep.size)
        pat = (np.einsum("ni,aij->naj", pat, pats_mat) > 0).reshape(-1, rep.size).astype(np.int32)
        norms = np.sum(np.abs(v), axis=1)
        safe = np.where(norms > 0, norms, 1.0)
        v = v / safe[:, None]
        with np.errstate(divide="ignore"):
            logs = np.repeat(logs, k) + np.where(norms > 0, np.log(safe), -np.inf)
            val = np.real(v @ rep.final)
            alive = (pat.astype(bool) & rep.final_pattern).any(axis=1) & (val > 0)
            tables.append(np.where(alive, logs + np.log(np.where(val > 0, val, 1.0)), -np.inf))
    return tables


def _split_defect(lt: float, lpre: float, lsuf: float) -> float:
    return abs(lt - lpre - lsuf)


def weak_gibbs_diagnostic(P, T: int, sample_budget: int = 0,
                          witnesses: Sequence[Sequence] = (), seed: int = 0,
                          budget: int = linrep.DEFAULT_BUDGET) -> float:
    """(1/T) sup over S in [1, T-1] and w in supp P_T of |log P_T(w)/(P_S(w_1..S) P_{T-S}(w_S+1..T))|.

    Exhaustive when all k^T words fit in the budget; otherwise the sup runs over
    the supplied witness words plus ``sample_budget`` words drawn from P_T.
    """
    rep = rep_of(P)
    k = len(rep.alphabet)
    if sum(k ** L for L in range(T + 1)) <= budget:
        tables = log_prob_table(rep, T, budget)
        full = tables[T]
        idx = np.arange(k ** T)
        supp = np.isfinite(full)
        worst = 0.0
        for S in range(1, T):
            pre = tables[S][idx // k ** (T - S)]
            suf = tables[T - S][idx % k ** (T - S)]
            d = np.abs(full[supp] - pre[supp] - suf[supp])
            worst = max(worst, float(np.max(d, initial=0.0)))
        return worst / T
    words = [list(w) for w in witnesses if len(w) == T]
    if sample_budget:
        words += sample_words(rep, T, sample_budget, seed)
    worst = 0.0
    for w in words:
        lt = rep.log_prob(w)
        if not np.isfinite(lt):
            continue
        for S in range(1, T):
            worst = max(worst, _split_defect(lt, rep.log_prob(w[:S]), rep.log_prob(w[S:])))
    return worst / T


def sample_words(rep: linrep.LinearRep, T: int, n: int, seed: int = 0) -> list:
    """Draw n words from P_T by sequential conditional sampling."""
    rng = np.random.default_rng(seed)
    out = []
    mats = rep.mats
    for _ in range(n):
        v = rep.init.astype(np.result_type(rep.init, mats))
        word = []
        for _t in range(T):
            cand = np.einsum("i,aij->aj", v, mats)
            # the final functional is invariant under the summed transfer matrix,
            # so contracting with it marginalizes the future
            w = np.real(cand @ rep.final)
            w = np.clip(w, 0.0, None)
            a = int(rng.choice(len(w), p=w / w.sum()))
            word.append(rep.alphabet[a])
            v = cand[a] / np.sum(np.abs(cand[a]))
        out.append(word)
    return out


# ---------------------------------------------------------------- entropy rate


def block_entropy(P, T: int, budget: int = linrep.DEFAULT_BUDGET) -> float:
    """Shannon entropy of P_T in nats, by enumeration."""
    H = 0.0
    for _, (lp,) in linrep.enumerate_words([rep_of(P)], T, budget=budget):
        fin = np.isfinite(lp)
        H -= float(np.sum(np.exp(lp[fin]) * lp[fin]))
    return H


def entropy_rate(P, T: int, T_prev: int | None = None,
                 budget: int = linrep.DEFAULT_BUDGET) -> float:
    """Plug-in entropy rate, Richardson-extrapolated from block lengths T_prev < T.

    If H_T/T = h + c/T then h = (H_T - H_{T_prev}) / (T - T_prev).
    """
    T_prev = T - 1 if T_prev is None else T_prev
    return (block_entropy(P, T, budget) - block_entropy(P, T_prev, budget)) / (T - T_prev)
