"""Rotational instrument, continued fractions and Diophantine angle construction.

Quantities that outgrow machine numbers (convergent denominators of constructed
angles grow like exp(Gamma(q))) are carried as exact integers while they fit the
big-integer budget, then as their logarithm, then as their double logarithm.
"""

from __future__ import annotations

import itertools
import math
import os
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import mpmath
import numpy as np

from .instrument import CPMap, Instrument

ALPHABET = ("0", "1", "2", "3")
THETA = {"0": "2", "1": "1", "2": "0", "3": "3"}
DEFAULT_PRECISION_BITS = 256
PRECISION_ENV = "UNRAVELING_LAB_PRECISION_BITS"
MAX_INTEGER_BITS = 10 ** 6
# log-domain values whose binary exponent exceeds this are demoted to log-log
MAX_LOG_EXPONENT_BITS = 4096
DIVERGENCE_THRESHOLD = 50.0
DIVERGENCE_MIN_POINTS = 3
GAMMA_TAGS = ("T2", "expT2")
RATIONAL_DENOMINATOR_LIMIT = 10 ** 6
# largest eigenvalue of Phi_2 restricted to diagonal matrices
_LAMBDA_PLUS = (1 + 1 / math.sqrt(2)) / 6


class RotationalError(ValueError):
    """Invalid input to the rotational machinery."""


class RationalAngleError(RotationalError):
    """The rotation angle is rational, so the unraveling support collapses."""


class PrecisionExhaustedError(ArithmeticError):
    """The requested quantity lies beyond the certified horizon of the angle."""


def precision_bits() -> int:
    raw = os.environ.get(PRECISION_ENV)
    if raw is None:
        return DEFAULT_PRECISION_BITS
    bits = int(raw)
    if bits < 64:
        raise RotationalError(f"{PRECISION_ENV} must be at least 64")
    return bits


def _workprec(extra: int = 0):
    return mpmath.workprec(max(precision_bits(), 512) + extra)


# ---------------------------------------------------------------------------
# continued fractions


@dataclass(frozen=True)
class ContinuedFraction:
    """Exact prefix [a0; a1, ..., an] with convergents p_i/q_i, i = 0..n."""

    a0: int
    quotients: tuple[int, ...]
    p: tuple[int, ...] = field(init=False)
    q: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        if any(int(a) < 1 for a in self.quotients):
            raise RotationalError("partial quotients must be positive")
        p_prev, q_prev, p_cur, q_cur = 1, 0, int(self.a0), 1
        ps, qs = [p_cur], [q_cur]
        for a in self.quotients:
            p_prev, p_cur = p_cur, int(a) * p_cur + p_prev
            q_prev, q_cur = q_cur, int(a) * q_cur + q_prev
            ps.append(p_cur)
            qs.append(q_cur)
        object.__setattr__(self, "quotients", tuple(int(a) for a in self.quotients))
        object.__setattr__(self, "p", tuple(ps))
        object.__setattr__(self, "q", tuple(qs))

    @property
    def terms(self) -> tuple[int, ...]:
        return (int(self.a0),) + self.quotients

    @property
    def n(self) -> int:
        return len(self.quotients)

    def convergent(self, i: int) -> Fraction:
        return Fraction(self.p[i], self.q[i])

    def extended(self, more: Sequence[int]) -> "ContinuedFraction":
        return ContinuedFraction(self.a0, self.quotients + tuple(int(a) for a in more))

    def recurrence_holds(self) -> bool:
        """Matrix recurrence, monotone denominators and coprimality, in exact integers."""
        prev = ((int(self.a0), 1), (1, 0))
        for i, a in enumerate(self.quotients, start=1):
            (p1, p0), (q1, q0) = prev
            cur = ((p1 * a + p0, p1), (q1 * a + q0, q1))
            if cur[0][0] != self.p[i] or cur[1][0] != self.q[i]:
                return False
            prev = cur
        ok_gcd = all(math.gcd(p, q) == 1 for p, q in zip(self.p, self.q))
        ok_mono = all(self.q[i + 1] > self.q[i] for i in range(1, len(self.q) - 1))
        return ok_gcd and ok_mono

    def to_json(self) -> dict:
        return {"a0": self.a0, "quotients": [str(a) for a in self.quotients]}


def _cf_of_fraction(x: Fraction, limit: int) -> list[int]:
    terms = []
    while len(terms) < limit:
        a = math.floor(x)
        terms.append(a)
        frac = x - a
        if frac == 0:
            break
        x = 1 / frac
    return terms


def _as_interval(x, bits: int) -> tuple[Fraction, Fraction]:
    """Rational enclosure of a real given exactly or by a high-precision evaluation."""
    if isinstance(x, (int, Fraction)):
        return Fraction(x), Fraction(x)
    with mpmath.workprec(bits):
        if callable(x):
            val = mpmath.mpf(x())
        elif isinstance(x, str):
            val = mpmath.mpf(x)
        else:
            val = mpmath.mpf(x)
    if isinstance(x, float):
        exact = Fraction(x)
        return exact, exact
    man, exp = val.man_exp
    centre = Fraction(int(man)) * (Fraction(2) ** int(exp))
    # mpmath evaluations are accurate to a few units in the last place
    radius = abs(centre) * Fraction(1, 2 ** (bits - 8)) + Fraction(1, 2 ** bits)
    return centre - radius, centre + radius


def cf_expand(x, n: int, bits: int | None = None) -> ContinuedFraction:
    """First ``n`` partial quotients of ``x``.

    ``x`` may be an int, Fraction, decimal string, mpmath number or a zero-argument
    callable evaluated at ``bits`` of working precision.  Quotients are certified by
    expanding both ends of a rational enclosure and keeping their common prefix.
    """
    if n < 0:
        raise RotationalError("n must be nonnegative")
    bits = bits or max(precision_bits(), 64 + 8 * n)
    lo, hi = _as_interval(x, bits)
    a_lo = _cf_of_fraction(lo, n + 2)
    a_hi = _cf_of_fraction(hi, n + 2)
    if lo == hi:
        if len(a_lo) < n + 2:
            raise RationalAngleError(f"{lo} is rational with {len(a_lo) - 1} partial quotients")
        return ContinuedFraction(a_lo[0], tuple(a_lo[1:n + 1]))
    # reals between two endpoints whose non-terminal prefixes agree share that prefix
    common = 0
    while common < min(len(a_lo), len(a_hi)) - 1 and a_lo[common] == a_hi[common]:
        common += 1
    if common < n + 1:
        raise PrecisionExhaustedError(
            f"only {max(common - 1, 0)} partial quotients are certified at {bits} bits")
    return ContinuedFraction(a_lo[0], tuple(a_lo[1:n + 1]))


# ---------------------------------------------------------------------------
# positive numbers of unbounded size


@dataclass(frozen=True)
class Huge:
    """A positive number stored at the shallowest level that fits: exact, log or log-log."""

    exact: int | None = None
    log: mpmath.mpf | None = None
    loglog: mpmath.mpf | None = None

    @staticmethod
    def of_log(value) -> "Huge":
        value = mpmath.mpf(value)
        if value > 0 and mpmath.mag(value) > MAX_LOG_EXPONENT_BITS:
            return Huge(loglog=mpmath.log(value))
        return Huge(log=value)

    @property
    def is_exact(self) -> bool:
        return self.exact is not None

    def log_value(self) -> mpmath.mpf:
        if self.exact is not None:
            return mpmath.log(self.exact)
        if self.log is not None:
            return self.log
        raise PrecisionExhaustedError("logarithm exceeds the representable range")

    def loglog_value(self) -> mpmath.mpf:
        if self.loglog is not None:
            return self.loglog
        return mpmath.log(self.log_value())

    def has_log(self) -> bool:
        return self.loglog is None

    def describe(self) -> str:
        if self.exact is not None:
            return str(self.exact)
        if self.log is not None:
            return f"exp({mpmath.nstr(self.log, 20)})"
        return f"exp(exp({mpmath.nstr(self.loglog, 20)}))"


def _gamma_log(tag: str, q: Huge) -> Huge:
    """Gamma(q) as a Huge: q^2 for T2, exp(q^2) for expT2."""
    if tag == "T2":
        if q.is_exact:
            return Huge(exact=q.exact ** 2)
        if not q.has_log():
            return Huge(loglog=mpmath.log(2) + q.loglog_value())
        return Huge.of_log(2 * q.log_value())
    if tag == "expT2":
        if q.is_exact:
            return Huge.of_log(mpmath.mpf(q.exact) ** 2)
        if not q.has_log():
            raise PrecisionExhaustedError("Gamma(q) exceeds the representable range")
        return Huge(loglog=2 * q.log_value())
    raise RotationalError(f"unknown growth tag {tag!r}; expected one of {GAMMA_TAGS}")


def _log_of(h: Huge) -> mpmath.mpf:
    """log h at any storage level (the log-log level must itself fit an mpf exponent)."""
    if h.has_log():
        return h.log_value()
    if mpmath.mag(h.loglog) > MAX_LOG_EXPONENT_BITS:
        raise PrecisionExhaustedError("logarithm exceeds the representable range")
    with _workprec(int(mpmath.mag(h.loglog)) + 64):
        return mpmath.exp(h.loglog)


def _value_of(h: Huge) -> mpmath.mpf | None:
    """h as an mpf, or None if its binary exponent would exceed the log-domain budget."""
    if h.is_exact:
        return mpmath.mpf(h.exact)
    if h.has_log() and mpmath.mag(h.log) <= MAX_LOG_EXPONENT_BITS - 2:
        return mpmath.exp(h.log)
    return None


def gamma_value(tag: str, q: int) -> float:
    """Gamma(q) for small integer q (T2: q^2, expT2: exp(q^2))."""
    if tag == "T2":
        return float(q * q)
    if tag == "expT2":
        return math.exp(q * q) if q * q < 700 else math.inf
    raise RotationalError(f"unknown growth tag {tag!r}; expected one of {GAMMA_TAGS}")


# ---------------------------------------------------------------------------
# angles


@dataclass(frozen=True)
class RotationAngle:
    """An irrational rotation angle Delta in [0, 2).

    Either a float declared irrational (``exact_value``), or an exact
    continued-fraction prefix followed by quotients known only through their
    logarithms (``tail``); the tail entries are the denominators q_{n+1}, q_{n+2}, ...
    of the convergents that follow the exact prefix.
    """

    cf: ContinuedFraction | None = None
    tail: tuple[Huge, ...] = ()
    exact_value: Fraction | None = None
    gamma: str | None = None
    certificate: dict | None = None
    bits: int = field(default_factory=precision_bits)

    @staticmethod
    def from_float(delta: float, allow_rational: bool = False) -> "RotationAngle":
        delta = float(delta)
        if not 0 <= delta < 2:
            raise RotationalError("delta must lie in [0,2[")
        exact = Fraction(delta)
        near = exact.limit_denominator(RATIONAL_DENOMINATOR_LIMIT)
        if not allow_rational and abs(float(near) - delta) <= 4 * np.finfo(float).eps:
            raise RationalAngleError(
                f"delta={delta!r} is numerically the rational {near}; the support collapses")
        return RotationAngle(exact_value=exact)

    @staticmethod
    def from_cf(cf: ContinuedFraction, tail: Sequence[Huge] = ()) -> "RotationAngle":
        if not 0 <= cf.a0 < 2:
            raise RotationalError("delta must lie in [0,2[")
        return RotationAngle(cf=cf, tail=tuple(tail))

    @property
    def value(self) -> float:
        if self.exact_value is not None:
            return float(self.exact_value)
        return float(self.cf.convergent(self.cf.n))

    def mp_value(self) -> mpmath.mpf:
        if self.exact_value is not None:
            return mpmath.mpf(self.exact_value.numerator) / self.exact_value.denominator
        return mpmath.mpf(self.cf.p[-1]) / self.cf.q[-1]

    # denominators of all known convergents, exact prefix then tail
    def denominators(self) -> list[Huge]:
        return [Huge(exact=q) for q in self.cf.q] + list(self.tail)

    def log_ell_at_convergent(self, i: int) -> tuple[mpmath.mpf, mpmath.mpf]:
        """Enclosure of log l(q_i Delta), from 1/(q_{i+1}+q_i) <= l <= 1/q_{i+1}.

        Returned as (lo, hi) in the log domain; raises when q_{i+1} is only known
        through its double logarithm.
        """
        dens = self.denominators()
        if self.cf is None or not 1 <= i < len(dens) - 1:
            raise PrecisionExhaustedError(f"convergent {i} is beyond the horizon")
        nxt, cur = dens[i + 1], dens[i]
        log_next = nxt.log_value()
        if nxt.is_exact and cur.is_exact:
            return -mpmath.log(nxt.exact + cur.exact), -log_next
        # q_i / q_{i+1} <= 1/a_{i+1}, which is below 2^-64 whenever the tail is symbolic
        slack = mpmath.exp(cur.log_value() - log_next)
        return -log_next - mpmath.log1p(slack), -log_next

    def loglog_inv_ell_at_convergent(self, i: int) -> mpmath.mpf:
        """log(-log l(q_i Delta)) to leading order, valid at every convergent in the tail."""
        dens = self.denominators()
        if self.cf is None or not 1 <= i < len(dens) - 1:
            raise PrecisionExhaustedError(f"convergent {i} is beyond the horizon")
        return dens[i + 1].loglog_value()

    def ell(self, T: int) -> tuple[mpmath.mpf, mpmath.mpf]:
        """Certified enclosure (lo, hi) of l(T Delta) = dist(T Delta, Z)."""
        T = int(T)
        if T < 0:
            raise RotationalError("T must be nonnegative")
        with _workprec():
            if self.exact_value is not None:
                x = T * self.exact_value
                v = abs(x - round(x))
                val = mpmath.mpf(v.numerator) / v.denominator
                ulp = mpmath.mpf(2) ** (-self.bits) * (1 + val)
                return max(val - ulp, mpmath.mpf(0)), val + ulp
            return self._ell_cf(T)

    def _ell_cf(self, T: int):
        dens = self.denominators()
        # convergent index i with q_{i+1} > T * 2^32, exact q_i
        n = self.cf.n
        choice = None
        for i in range(n + 1):
            if i + 1 >= len(dens):
                break
            nxt = dens[i + 1]
            big = (not nxt.is_exact) or nxt.exact > T * 2 ** 32
            if big:
                choice = i
                break
        if choice is None:
            raise PrecisionExhaustedError(f"T={T} is beyond the certified horizon of the angle")
        i = choice
        p_i, q_i = self.cf.p[i], self.cf.q[i]
        nxt = dens[i + 1]
        # |Delta - p_i/q_i| lies in [1/(q_i (q_{i+1}+q_i)), 1/(q_i q_{i+1})], sign (-1)^i
        log_dev_hi = -mpmath.log(q_i) - nxt.log_value()
        log_dev_lo = log_dev_hi - mpmath.log1p(mpmath.exp(mpmath.log(q_i) - nxt.log_value()))
        dev_hi, dev_lo = mpmath.exp(log_dev_hi), mpmath.exp(log_dev_lo)
        sign = 1 if i % 2 == 0 else -1
        r = (T * p_i) % q_i
        if r == 0:
            k = T // q_i
            lo, hi = k * q_i * dev_lo, k * q_i * dev_hi
            if hi >= 0.5:
                raise PrecisionExhaustedError("l(T Delta) is not resolved")
            return lo, hi
        frac = mpmath.mpf(r) / q_i
        a = frac + sign * T * dev_lo
        b = frac + sign * T * dev_hi
        lo_x, hi_x = min(a, b), max(a, b)
        ulp = mpmath.mpf(2) ** (-self.bits)
        lo_x, hi_x = lo_x - ulp, hi_x + ulp
        if lo_x <= 0 or hi_x >= 1:
            raise PrecisionExhaustedError("l(T Delta) is not resolved")
        cands = [min(lo_x, 1 - lo_x), min(hi_x, 1 - hi_x)]
        lo = min(cands)
        hi = mpmath.mpf(0.5) if lo_x <= 0.5 <= hi_x else max(cands)
        if hi - lo > mpmath.mpf(2) ** (-self.bits // 2):
            raise PrecisionExhaustedError("l(T Delta) enclosure is wider than the certified error")
        return lo, hi

    def to_json(self) -> dict:
        doc: dict = {"bits": self.bits}
        if self.exact_value is not None:
            doc["value"] = float(self.exact_value)
        if self.cf is not None:
            doc["continued_fraction"] = self.cf.to_json()
            doc["value"] = mpmath.nstr(self.mp_value(), 30)
            doc["symbolic_denominators"] = [h.describe() for h in self.tail]
        if self.gamma is not None:
            doc["gamma"] = self.gamma
        if self.certificate is not None:
            doc["certificate"] = self.certificate
        return doc


def as_angle(delta) -> RotationAngle:
    if isinstance(delta, RotationAngle):
        return delta
    return RotationAngle.from_float(float(delta))


# ---------------------------------------------------------------------------
# instrument and closed forms


def rotation_matrix(delta: float) -> np.ndarray:
    c, s = math.cos(math.pi * delta), math.sin(math.pi * delta)
    return np.array([[c, -s], [s, c]])


def rotational_maps(delta: float) -> dict[str, CPMap]:
    """Heisenberg maps: rotation by Delta, the lowering projection and two trace maps."""
    R = rotation_matrix(delta)
    # Phi_0[X] = R X R^*/3 comes from the Kraus operator R^*/sqrt(3)
    phi0 = CPMap([R.T / math.sqrt(3)])
    lower = np.array([[0.0, 0.0], [1.0, 0.0]])
    phi1 = CPMap([lower.T / math.sqrt(12)])

    def unit(i, j):
        E = np.zeros((2, 2))
        E[j, i] = 1.0
        return E

    # (1/6) tr(X) 1 = sum_{i,j} (1/6) |i><j| X |j><i|; Phi_2 lowers the (i=1, j=0) weight to 1/12
    phi3 = CPMap([unit(i, j) / math.sqrt(6) for i in range(2) for j in range(2)])
    weights2 = {(0, 0): 1 / 6, (0, 1): 1 / 6, (1, 0): 1 / 12, (1, 1): 1 / 6}
    phi2 = CPMap([unit(i, j) * math.sqrt(w) for (i, j), w in weights2.items()])
    return {"0": phi0, "1": phi1, "2": phi2, "3": phi3}


def rotational_instrument(delta) -> Instrument:
    """Four-outcome instrument on C^2 with rho = 1/2 and reversal 0 <-> 2."""
    angle = as_angle(delta)
    return Instrument(ALPHABET, rotational_maps(angle.value), np.eye(2) / 2, dict(THETA))


def _word_string(word) -> str:
    s = "".join(str(c) for c in word)
    if set(s) - set("0123"):
        raise RotationalError(f"word {s!r} is not over the alphabet 0123")
    return s


def parse_one_zeros_one(word) -> int:
    """T for a word of the form 1 0^T 1."""
    s = _word_string(word)
    m = re.fullmatch(r"10*1", s)
    if not m:
        raise RotationalError(f"word {s!r} is not of the form 1 0^T 1")
    return len(s) - 2


def log_sin2_from_ell(lo, hi) -> tuple[mpmath.mpf, mpmath.mpf]:
    """Enclosure of log sin^2(pi l) for l in [lo, hi] within [0, 1/2]."""
    if lo <= 0:
        return mpmath.ninf, 2 * mpmath.log(mpmath.sin(mpmath.pi * hi))
    return 2 * mpmath.log(mpmath.sin(mpmath.pi * lo)), 2 * mpmath.log(mpmath.sin(mpmath.pi * hi))


def log_prob_one_zeros_one(delta, T: int, enclosure: bool = False):
    """log P([1 0^T 1]) = -log 288 - T log 3 + log sin^2(pi l(T Delta)).

    Returns a float, or the certified (lo, hi) enclosure when ``enclosure``.
    """
    angle = as_angle(delta)
    with _workprec():
        lo, hi = angle.ell(T)
        s_lo, s_hi = log_sin2_from_ell(lo, hi)
        base = -mpmath.log(288) - T * mpmath.log(3)
        if enclosure:
            return base + s_lo, base + s_hi
        if s_lo == mpmath.ninf:
            if hi == 0:
                return -math.inf
            raise PrecisionExhaustedError("l(T Delta) is not bounded away from zero")
        return float(base + (s_lo + s_hi) / 2)


def word_prob_closed(delta, word) -> float:
    """Closed-form log-probability of a word 1 0^T 1; -inf for words containing 11."""
    s = _word_string(word)
    if "11" in s:
        return -math.inf
    return log_prob_one_zeros_one(delta, parse_one_zeros_one(s))


def log_prob_hat_one_zeros_one(T) -> mpmath.mpf:
    """log P_hat([1 0^T 1]) = log P([1 2^T 1]) = log((1/288) (A^T)_{12}).

    A = [[1/6, 1/6], [1/12, 1/6]] is Phi_2 on diagonal matrices, with
    (A^T)_{12} = (lambda_+^T - lambda_-^T)/sqrt(2).  ``T`` may be an mpf.
    """
    with _workprec():
        lam_p = (1 + 1 / mpmath.sqrt(2)) / 6
        lam_m = (1 - 1 / mpmath.sqrt(2)) / 6
        T = mpmath.mpf(T)
        base = -mpmath.log(288) - mpmath.log(2) / 2 + T * mpmath.log(lam_p)
        if T > 10 ** 6:
            # (lambda_-/lambda_+)^T < exp(-10^6) is below any working precision
            return base
        return base + mpmath.log1p(-mpmath.exp(T * (mpmath.log(lam_m) - mpmath.log(lam_p))))


@dataclass(frozen=True)
class GapProfile:
    word: str
    gaps: tuple[int, ...]

    @property
    def r(self) -> int:
        return len(self.gaps)


def gap_profile(word) -> GapProfile:
    """Maximal left-to-right occurrences of 1 0^n 1 with n >= 1 (they may share a 1)."""
    s = _word_string(word)
    gaps = tuple(len(m.group(1)) for m in re.finditer(r"(?=1(0+)1)", s))
    return GapProfile(s, gaps)


def product_bound_exponent(inst: Instrument, delta, words: Sequence[str]) -> float:
    """Smallest C with P([w]) >= exp(-C |w|) prod sin^2(n_i pi Delta) on the given words."""
    angle = as_angle(delta)
    worst = -math.inf
    for w in words:
        lp = inst.rep.log_prob(w)
        if lp == -math.inf:
            continue
        prof = gap_profile(w)
        sins = sum(2 * math.log(abs(math.sin(n * math.pi * angle.value))) for n in prof.gaps)
        worst = max(worst, (sins - lp) / len(w))
    return worst


# ---------------------------------------------------------------------------
# angle construction


def _seed_value(lo: Fraction, hi: Fraction) -> Callable[[], mpmath.mpf]:
    lo_m = mpmath.mpf(lo.numerator) / lo.denominator
    hi_m = mpmath.mpf(hi.numerator) / hi.denominator

    def golden_section():
        return lo_m + (hi_m - lo_m) * (mpmath.sqrt(5) - 1) / 2

    return golden_section


def _next_quotient(tag: str, q: Huge, max_bits: int) -> tuple[int | None, Huge]:
    """a = ceil(exp(Gamma(q))/q), exactly when it fits ``max_bits``, else symbolically."""
    gam = _gamma_log(tag, q)
    g = _value_of(gam)
    if g is not None and q.is_exact:
        est_bits = float(g / mpmath.log(2)) - math.log2(q.exact)
        if est_bits <= max_bits:
            with _workprec(int(est_bits) + 128):
                val = mpmath.exp(g) / q.exact
                a = int(mpmath.ceil(val))
                if abs(val - mpmath.nint(val)) < mpmath.mpf(2) ** -32:
                    raise PrecisionExhaustedError("quotient ceiling is not resolved")
            return max(a, 1), Huge(exact=max(a, 1))
    if g is not None:
        # log a = Gamma(q) - log q, up to q exp(-Gamma(q))
        return None, Huge.of_log(g - q.log_value())
    # log a agrees with Gamma(q) to relative order log(q)/Gamma(q)
    return None, Huge(loglog=_log_of(gam))


def _next_denominator(a: Huge, q: Huge, q_prev: Huge) -> Huge:
    if a.is_exact and q.is_exact and q_prev.is_exact:
        return Huge(exact=a.exact * q.exact + q_prev.exact)
    # q_{k+1} = a q_k (1 + O(1/a)) and 1/a is far below working precision here
    if not a.has_log():
        return Huge(loglog=a.loglog_value())
    return Huge.of_log(a.log_value() + q.log_value())


def construct_delta(gamma: str, interval: tuple, growth_steps: int = 3,
                    max_bits: int = MAX_INTEGER_BITS, scan_limit: int = 20000) -> RotationAngle:
    """Angle in ``interval`` with l(q_i Delta) ~ exp(-Gamma(q_i)) along its convergents.

    A seed expansion is frozen once two consecutive convergents lie in the
    interval; later quotients follow a_{i+1} = ceil(exp(Gamma(q_i))/q_i).
    """
    if gamma not in GAMMA_TAGS:
        raise RotationalError(f"unknown growth tag {gamma!r}; expected one of {GAMMA_TAGS}")
    lo, hi = (Fraction(str(v)) for v in interval)
    if not (0 <= lo < hi <= 2):
        raise RotationalError("interval must be a nonempty subinterval of [0,2]")
    seed = _seed_value(lo, hi)
    n = 1
    while True:
        cf = cf_expand(seed, n)
        if n >= 1 and all(lo < cf.convergent(j) < hi for j in (n - 1, n)):
            break
        n += 1
        if n > 200:
            raise PrecisionExhaustedError("seed expansion did not settle inside the interval")
    seed_index = n
    quotients = list(cf.quotients)
    dens: list[Huge] = [Huge(exact=q) for q in cf.q]
    tail: list[Huge] = []
    with _workprec(1024):
        _grow(gamma, growth_steps, max_bits, quotients, dens, tail)
    angle = RotationAngle(cf=ContinuedFraction(cf.a0, tuple(quotients)), tail=tuple(tail),
                          gamma=gamma)
    cert = certify_angle(angle, seed_index, (lo, hi), scan_limit)
    return RotationAngle(cf=angle.cf, tail=angle.tail, gamma=gamma, certificate=cert,
                         bits=angle.bits)


def _grow(gamma, growth_steps, max_bits, quotients, dens, tail):
    for _ in range(growth_steps):
        q_cur, q_prev = dens[-1], dens[-2]
        if q_cur.loglog is not None:
            break
        try:
            a_exact, a = _next_quotient(gamma, q_cur, max_bits)
        except PrecisionExhaustedError:
            break
        q_next = _next_denominator(a, q_cur, q_prev)
        dens.append(q_next)
        if a_exact is not None and not tail:
            quotients.append(a_exact)
        else:
            tail.append(q_next)


def _sup_q_psi(tag: str, up_to: int = 64) -> float:
    return max(q * math.exp(-gamma_value(tag, q)) for q in range(1, up_to + 1))


def certify_angle(angle: RotationAngle, seed_index: int, interval, scan_limit: int) -> dict:
    """Certificate for a constructed angle, in interval arithmetic on logarithms.

    Convergent rows: l(q_i Delta) exp(Gamma(q_i)) lies in [c_minus, 1] for
    i >= seed_index, where c_minus = 1/(2 (1 + 2 sup q psi(q))).  Since
    l(q Delta) >= l(q_i Delta) for q_i <= q < q_{i+1} and Gamma increases, the rows
    give l(q Delta) >= c_minus exp(-Gamma(q)) for every q from q_seed up to
    q_{last row + 1} - 1.  Below q_seed (and beyond, up to ``scan_limit``) the
    constant is measured by an exhaustive scan.
    """
    tag = angle.gamma
    lo, hi = interval
    cf = angle.cf
    dens = angle.denominators()
    c_minus = 1 / (2 * (1 + 2 * _sup_q_psi(tag)))
    rows = []
    tol = mpmath.mpf(2) ** -64
    with _workprec(1024):
        log_c_minus = mpmath.log(c_minus)
        for i in range(max(seed_index, 1), len(dens) - 1):
            gam = _gamma_log(tag, dens[i])
            g = _value_of(gam)
            if g is not None and dens[i + 1].has_log():
                l_lo, l_hi = angle.log_ell_at_convergent(i)
                scaled_lo, scaled_hi = l_lo + g, l_hi + g
                ok = scaled_lo >= log_c_minus - tol and scaled_hi <= tol
                rows.append({"i": i, "q_i": dens[i].describe(),
                             "log_scaled_ell": [mpmath.nstr(scaled_lo, 12),
                                                mpmath.nstr(scaled_hi, 12)],
                             "within": bool(ok)})
            else:
                # only leading orders are representable: log q_{i+1} ~ Gamma(q_i)
                try:
                    lhs, rhs = dens[i + 1].loglog_value(), _log_of(gam)
                except PrecisionExhaustedError:
                    break
                ok = abs(lhs - rhs) <= mpmath.mpf(2) ** -32 * abs(rhs)
                rows.append({"i": i, "q_i": dens[i].describe(), "leading_order_only": True,
                             "within": bool(ok)})
        scan_min, scan_top = math.inf, 0
        for q in range(1, scan_limit + 1):
            try:
                l_lo, _ = angle.ell(q)
            except PrecisionExhaustedError:
                break
            scan_top = q
            if l_lo <= 0:
                scan_min = -math.inf
                break
            if tag == "T2" or q * q < 700:
                g = mpmath.mpf(q * q) if tag == "T2" else mpmath.exp(q * q)
                scan_min = min(scan_min, float(mpmath.log(l_lo) + g))
    rigorous = [r for r in rows if not r.get("leading_order_only")]
    covered = dens[rigorous[-1]["i"] + 1].describe() if rigorous else None
    scan_const = math.exp(scan_min) if scan_min < math.inf else 1.0
    return {
        "gamma": tag,
        "seed_index": seed_index,
        "c_minus": c_minus,
        "c_plus": 1.0,
        "convergents": rows,
        "convergents_ok": all(r["within"] for r in rows),
        "rigorous_upto_q_exclusive": covered,
        "scan_upto": scan_top,
        "scan_constant": scan_const,
        "constant": min(scan_const, c_minus),
        "in_interval": bool(lo < cf.convergent(seed_index - 1) < hi
                            and lo < cf.convergent(seed_index) < hi),
    }


# ---------------------------------------------------------------------------
# divergence and derivative probes


@dataclass(frozen=True)
class ProbeRow:
    index: int
    T: str
    log_T: float
    witness: mpmath.mpf | None
    log_witness: mpmath.mpf


@dataclass
class DivergenceReport:
    alpha: float
    rows: list[ProbeRow]
    diverges: bool

    def as_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "diverges": self.diverges,
            "rows": [{"i": r.index, "T": r.T, "log_T": r.log_T,
                      "witness": None if r.witness is None else mpmath.nstr(r.witness, 17),
                      "log_witness": mpmath.nstr(r.log_witness, 17)} for r in self.rows],
        }


def witness_at_convergent(angle: RotationAngle, i: int, alpha: float):
    """(1/(T+2)) [(1-alpha) log P([1 0^T 1]) + alpha log P_hat([1 0^T 1])] at T = q_i.

    Returns (witness or None, log of the dominant positive part); the witness
    itself is None when only its logarithm is representable.
    """
    dens = angle.denominators()
    qi = dens[i]
    with _workprec(512):
        log_T = qi.log_value()
        T = mpmath.mpf(qi.exact) if qi.is_exact else mpmath.exp(log_T)
        log_hat = log_prob_hat_one_zeros_one(T)
        nxt = dens[i + 1]
        if nxt.has_log():
            l_lo, l_hi = angle.log_ell_at_convergent(i)
            log_ell = l_lo
            if log_ell > -8:
                lo, hi = angle.ell(int(qi.exact))
                log_sin2 = log_sin2_from_ell(lo, hi)[0]
            else:
                # sin(pi l) >= 2 l for l <= 1/2
                log_sin2 = 2 * (mpmath.log(2) + log_ell)
            log_p = -mpmath.log(288) - T * mpmath.log(3) + log_sin2
            w = ((1 - alpha) * log_p + alpha * log_hat) / (T + 2)
            log_w = mpmath.log(w) if w > 0 else mpmath.ninf
            return w, log_w
        # only log log q_{i+1} is known: the -log P term dominates and equals 2 log q_{i+1}
        if alpha <= 1:
            raise PrecisionExhaustedError("witness sign is undetermined at this depth")
        log_w = mpmath.log(2 * (alpha - 1)) + nxt.loglog_value() - mpmath.log(T + 2)
        return None, log_w


def pressure_divergence_probe(delta: RotationAngle, alpha: float) -> DivergenceReport:
    if 0 <= alpha <= 1:
        raise RotationalError("alpha must lie outside [0,1]")
    if delta.cf is None or delta.certificate is None:
        raise RotationalError("the probe needs an angle from construct_delta")
    start = delta.certificate["seed_index"]
    rows = []
    for i in range(start, len(delta.denominators()) - 1):
        try:
            w, log_w = witness_at_convergent(delta, i, alpha)
        except PrecisionExhaustedError:
            break
        qi = delta.denominators()[i]
        log_T = float(qi.log_value()) if qi.has_log() else math.inf
        rows.append(ProbeRow(i, qi.describe(), log_T, w, log_w))
    if not rows:
        raise PrecisionExhaustedError("no convergent within the horizon")
    logs = [r.log_witness for r in rows]
    monotone = all(b > a for a, b in zip(logs, logs[1:]))
    diverges = (len(rows) >= DIVERGENCE_MIN_POINTS and monotone
                and logs[-1] > math.log(DIVERGENCE_THRESHOLD))
    return DivergenceReport(alpha, rows, bool(diverges))


@dataclass
class DerivativeReport:
    gamma: str
    increments: list[float]
    increment_bound: float
    bound_finite: bool
    log_derivative_sequence: list[str]
    derivative_sequence_increasing: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def increment_terms(tag: str, T: int) -> list[float]:
    """Gamma(n) P_hat([1 0^n 1]) for n = 1..T-2; their sum is u_T - u_{T-1}."""
    out = []
    for n in range(1, T - 1):
        out.append(gamma_value(tag, n) * math.exp(float(log_prob_hat_one_zeros_one(n))))
    return out


def increment_bound(tag: str, n_max: int = 400) -> float:
    """Partial sum of Gamma(n) 3^{-n-2}, which dominates every increment u_T - u_{T-1}."""
    if tag == "T2":
        return math.fsum(n * n * 3.0 ** (-n - 2) for n in range(1, n_max + 1))
    # exp(n^2) 3^{-n-2} diverges; report the partial sum in the log domain
    with _workprec():
        s = mpmath.fsum(mpmath.exp(n * n - (n + 2) * mpmath.log(3)) for n in range(1, n_max + 1))
        return float(s) if s < mpmath.mpf(1e300) else math.inf


def derivative_probe(delta: RotationAngle, T_increments: int = 40) -> DerivativeReport:
    """Evidence for finiteness of the left derivative of the pressure at 1.

    For the finite case the increments u_T - u_{T-1} are bounded by the convergent
    series sum Gamma(n) 3^{-n-2}.  For the infinite case the lower bound
    P_hat([1 0^T 1]) (-log P([1 0^T 1]))/(T+2) is evaluated along T = q_i.
    """
    tag = delta.gamma
    incs = [math.fsum(increment_terms(tag, T)) for T in range(3, T_increments + 1)]
    bound = increment_bound(tag)
    seq = []
    start = delta.certificate["seed_index"] - 1 if delta.certificate else 1
    dens = delta.denominators()
    with _workprec(512):
        for i in range(max(start, 1), len(dens) - 1):
            qi = dens[i]
            if not qi.has_log():
                break
            T = mpmath.mpf(qi.exact) if qi.is_exact else mpmath.exp(qi.log_value())
            nxt = dens[i + 1]
            if nxt.has_log():
                l_lo, _ = delta.log_ell_at_convergent(i)
                neg_log_p = mpmath.log(288) + T * mpmath.log(3) - 2 * (mpmath.log(2) + l_lo)
                if l_lo > -8:
                    lo, hi = delta.ell(int(qi.exact))
                    neg_log_p = mpmath.log(288) + T * mpmath.log(3) - log_sin2_from_ell(lo, hi)[0]
                log_neg = mpmath.log(neg_log_p)
            else:
                log_neg = mpmath.log(2) + nxt.loglog_value()
            seq.append(log_prob_hat_one_zeros_one(T) + log_neg - mpmath.log(T + 2))
    increasing = len(seq) >= 2 and all(b > a for a, b in zip(seq, seq[1:]))
    return DerivativeReport(tag, incs, bound, math.isfinite(bound) and bound < 1.0,
                            [mpmath.nstr(s, 17) for s in seq], increasing)


def u_T_enumerated(inst: Instrument, tag: str, T: int) -> float:
    """u_T = sum over words of P_hat([w]) * sum_i Gamma(n_i), by enumeration."""
    from .entropy import log_prob_table, reversal_pair

    _, rep_hat = reversal_pair(inst)
    logs = log_prob_table(rep_hat, T)[T]
    total = 0.0
    for w, lp in zip(itertools.product(rep_hat.alphabet, repeat=T), logs):
        if lp == -math.inf:
            continue
        prof = gap_profile("".join(w))
        total += math.exp(lp) * sum(gamma_value(tag, n) for n in prof.gaps)
    return total


def count_words_without_11(T: int) -> int:
    """Number of words of length T over 0123 avoiding the factor 11."""
    free, ends_in_one = 1, 0
    for _ in range(T):
        free, ends_in_one = 3 * (free + ends_in_one), free
    return free + ends_in_one


def mp_str(x, digits: int = 17) -> str:
    return mpmath.nstr(x, digits)
