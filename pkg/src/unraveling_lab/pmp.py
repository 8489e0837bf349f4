"""Matrix-product (PMP), hidden Markov (HM) and function Markov (FM) measures."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from . import linrep
from .instrument import CPMap, Instrument
from .numerics import ReducibleMatrixError, stationary_vector

STOCHASTIC_TOL = 1e-12
STATIONARY_TOL = 1e-10


class SpecError(ValueError):
    """A PMP, HM or FM specification violates its invariants."""


def _check_stationary(p: np.ndarray, M: np.ndarray, what: str) -> None:
    """Recompute the stationary vector and compare it with the supplied one."""
    try:
        ref = stationary_vector(M)
        if np.max(np.abs(ref - p)) > STATIONARY_TOL:
            raise SpecError(f"{what}: supplied vector differs from the stationary vector")
    except ReducibleMatrixError:
        # several stationary vectors: the supplied one only has to be one of them
        if np.max(np.abs(p @ M - p)) > STATIONARY_TOL:
            raise SpecError(f"{what}: supplied vector is not stationary") from None


@dataclass(frozen=True)
class PMPSpec:
    """P(w) = p M_{w1} ... M_{wT} 1 for nonnegative M_a summing to a stochastic M."""

    alphabet: tuple
    matrices: Mapping
    p: np.ndarray
    validate: bool = True

    def __post_init__(self):
        object.__setattr__(self, "alphabet", tuple(self.alphabet))
        mats = {a: np.asarray(self.matrices[a], dtype=float) for a in self.alphabet}
        object.__setattr__(self, "matrices", mats)
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        if self.validate:
            self._validate()

    def _validate(self):
        d = self.dim
        for a, m in self.matrices.items():
            if m.shape != (d, d):
                raise SpecError(f"matrix for {a!r} has shape {m.shape}, expected {(d, d)}")
            if np.any(m < 0):
                raise SpecError("PMP matrices must be entrywise nonnegative")
        if np.any(self.p < 0) or abs(self.p.sum() - 1) > STOCHASTIC_TOL:
            raise SpecError("p must be a probability vector")
        M = self.total
        if np.max(np.abs(M.sum(axis=1) - 1)) > STOCHASTIC_TOL:
            raise SpecError("the summed matrix must be right-stochastic")
        if np.max(np.abs(self.p @ M - self.p)) > STOCHASTIC_TOL:
            raise SpecError("p is not stationary for the summed matrix")

    @property
    def dim(self) -> int:
        return self.p.shape[0]

    @property
    def total(self) -> np.ndarray:
        return sum(self.matrices[a] for a in self.alphabet)

    @cached_property
    def rep(self) -> linrep.LinearRep:
        return linrep.from_matrices(self.alphabet, self.p,
                                    [self.matrices[a] for a in self.alphabet],
                                    np.ones(self.dim))

    def to_json(self) -> dict:
        return {"kind": "pmp", "alphabet": list(self.alphabet),
                "matrices": {a: self.matrices[a].tolist() for a in self.alphabet},
                "p": self.p.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "PMPSpec":
        alphabet = [str(a) for a in doc["alphabet"]]
        return cls(alphabet, {a: doc["matrices"][a] for a in alphabet}, doc["p"])


@dataclass(frozen=True)
class HMSpec:
    """Hidden Markov measure: stationary chain (Q, q) on hidden states, emissions R."""

    hidden: tuple
    alphabet: tuple
    Q: np.ndarray
    q: np.ndarray
    R: np.ndarray
    validate: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(self.hidden))
        object.__setattr__(self, "alphabet", tuple(self.alphabet))
        for name in ("Q", "q", "R"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.validate:
            n, k = len(self.hidden), len(self.alphabet)
            if self.Q.shape != (n, n) or self.R.shape != (n, k) or self.q.shape != (n,):
                raise SpecError("HM shapes are inconsistent")
            for M in (self.Q, self.R):
                if np.any(M < 0) or np.max(np.abs(M.sum(axis=1) - 1)) > STOCHASTIC_TOL:
                    raise SpecError("Q and R must be right-stochastic")
            if abs(self.q.sum() - 1) > STOCHASTIC_TOL or np.any(self.q < 0):
                raise SpecError("q must be a probability vector")
            _check_stationary(self.q, self.Q, "HM")

    def to_json(self) -> dict:
        return {"kind": "hm", "hidden": [list(h) if isinstance(h, tuple) else h for h in self.hidden],
                "alphabet": list(self.alphabet), "Q": self.Q.tolist(),
                "q": self.q.tolist(), "R": self.R.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "HMSpec":
        hidden = [tuple(h) if isinstance(h, list) else h for h in doc["hidden"]]
        return cls(hidden, [str(a) for a in doc["alphabet"]], doc["Q"], doc["q"], doc["R"])


@dataclass(frozen=True)
class FMSpec:
    """Function Markov measure: image of a stationary chain (Q, q) under onto f."""

    hidden: tuple
    Q: np.ndarray
    q: np.ndarray
    f: Mapping
    validate: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(self.hidden))
        object.__setattr__(self, "Q", np.asarray(self.Q, dtype=float))
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "f", dict(self.f))
        if self.validate:
            if set(self.f) != set(self.hidden):
                raise SpecError("f must be defined on every hidden state")
            if np.any(self.Q < 0) or np.max(np.abs(self.Q.sum(axis=1) - 1)) > STOCHASTIC_TOL:
                raise SpecError("Q must be right-stochastic")
            _check_stationary(self.q, self.Q, "FM")

    @property
    def alphabet(self) -> tuple:
        seen = []
        for h in self.hidden:
            if self.f[h] not in seen:
                seen.append(self.f[h])
        return tuple(seen)

    def to_json(self) -> dict:
        return {"kind": "fm", "hidden": list(self.hidden), "Q": self.Q.tolist(),
                "q": self.q.tolist(), "f": {str(h): v for h, v in self.f.items()}}

    @classmethod
    def from_json(cls, doc: dict) -> "FMSpec":
        hidden = [str(h) for h in doc["hidden"]]
        return cls(hidden, doc["Q"], doc["q"], {str(h): str(v) for h, v in doc["f"].items()})


def pmp_prob(spec: PMPSpec, word: Sequence) -> float:
    """log(p M_{w1} ... M_{wT} 1), with exact zeros decided by zero patterns."""
    if len(word) == 0:
        return 0.0
    return spec.rep.log_prob(word)


def canonical_instrument(spec: PMPSpec, theta: Mapping | None = None) -> Instrument:
    """Diagonal instrument Phi_a[X] = sum_ij m_ij(a) <v_j|X v_j> |v_i><v_i|."""
    if np.any(spec.p <= 0):
        raise SpecError("the canonical instrument needs a strictly positive p")
    d = spec.dim
    maps = {}
    for a in spec.alphabet:
        m = spec.matrices[a]
        kraus = []
        for i, j in zip(*np.nonzero(m)):
            K = np.zeros((d, d), dtype=complex)
            K[j, i] = np.sqrt(m[i, j])
            kraus.append(K)
        if not kraus:
            kraus = [np.zeros((d, d), dtype=complex)]
        maps[a] = CPMap(kraus)
    return Instrument(spec.alphabet, maps, np.diag(spec.p).astype(complex),
                      theta or {a: a for a in spec.alphabet})


def or_pmp(spec: PMPSpec, theta: Mapping) -> PMPSpec:
    """Outcome-reversed PMP spec with matrices D^-1 M_theta(a)^T D."""
    if np.any(spec.p <= 0):
        raise SpecError("outcome reversal needs a strictly positive p")
    D = np.diag(spec.p)
    Dinv = np.diag(1.0 / spec.p)
    mats = {a: Dinv @ spec.matrices[theta[a]].T @ D for a in spec.alphabet}
    return PMPSpec(spec.alphabet, mats, spec.p)


def gibbs_constant(spec: PMPSpec) -> float | None:
    """min m_ij(a) / (p_j sum_k m_ik(a)) when every M_a is entrywise positive."""
    if any(np.any(spec.matrices[a] <= 0) for a in spec.alphabet) or np.any(spec.p <= 0):
        return None
    C = np.inf
    for a in spec.alphabet:
        m = spec.matrices[a]
        C = min(C, float(np.min(m / (spec.p[None, :] * m.sum(axis=1)[:, None]))))
    return C


def fm_to_hm(src: FMSpec) -> HMSpec:
    alphabet = src.alphabet
    R = np.array([[1.0 if src.f[h] == a else 0.0 for a in alphabet] for h in src.hidden])
    return HMSpec(src.hidden, alphabet, src.Q, src.q, R)


def hm_to_fm(src: HMSpec) -> FMSpec:
    states = [(l, a) for l in src.hidden for a in src.alphabet]
    n, k = len(src.hidden), len(src.alphabet)
    q = (src.q[:, None] * src.R).ravel()
    P = np.einsum("ij,jb->ijb", src.Q, src.R)  # (l, l', a')
    P = np.repeat(P.reshape(n, n * k), k, axis=0)
    f = {s: s[1] for s in states}
    return FMSpec(states, P, q, f)


def hm_to_pmp(src: HMSpec) -> PMPSpec:
    mats = {a: src.Q * src.R[None, :, j] for j, a in enumerate(src.alphabet)}
    return PMPSpec(src.alphabet, mats, src.q)


def pmp_to_hm(src: PMPSpec) -> HMSpec:
    d = src.dim
    hidden = [(i, a) for a in src.alphabet for i in range(d)]
    q = np.concatenate([src.p @ src.matrices[a] for a in src.alphabet])
    Q = np.zeros((len(hidden), len(hidden)))
    for x, (i, _) in enumerate(hidden):
        for y, (j, b) in enumerate(hidden):
            Q[x, y] = src.matrices[b][i, j]
    R = np.array([[1.0 if h[1] == a else 0.0 for a in src.alphabet] for h in hidden])
    return HMSpec(hidden, src.alphabet, Q, q, R)


_ROUTES = {
    ("fm", "hm"): [fm_to_hm],
    ("hm", "fm"): [hm_to_fm],
    ("hm", "pmp"): [hm_to_pmp],
    ("pmp", "hm"): [pmp_to_hm],
    ("fm", "pmp"): [fm_to_hm, hm_to_pmp],
    ("pmp", "fm"): [pmp_to_hm, hm_to_fm],
}


def kind_of(spec) -> str:
    if isinstance(spec, PMPSpec):
        return "pmp"
    if isinstance(spec, HMSpec):
        return "hm"
    if isinstance(spec, FMSpec):
        return "fm"
    raise TypeError(f"not a measure specification: {type(spec).__name__}")


def convert(src, target_kind: str):
    """Convert between FM, HM and PMP representations of the same measure."""
    kind = kind_of(src)
    target_kind = target_kind.lower()
    if kind == target_kind:
        return src
    try:
        route = _ROUTES[(kind, target_kind)]
    except KeyError:
        raise ValueError(f"unknown target kind {target_kind!r}") from None
    out = src
    for step in route:
        out = step(out)
    return out


def as_pmp(spec) -> PMPSpec:
    return convert(spec, "pmp")


def markov_pmp(P, p=None, alphabet: Sequence | None = None) -> PMPSpec:
    """Markov measure p_{w1} p_{w1 w2} ... as a PMP spec with m_xy(a) = p_xy delta_xa."""
    P = np.asarray(P, dtype=float)
    d = P.shape[0]
    p = stationary_vector(P) if p is None else np.asarray(p, dtype=float)
    alphabet = tuple(alphabet) if alphabet is not None else tuple(str(i) for i in range(d))
    mats = {}
    for x, a in enumerate(alphabet):
        m = np.zeros_like(P)
        m[x] = P[x]
        mats[a] = m
    return PMPSpec(alphabet, mats, p)


def bernoulli_pmp(Q: Mapping, d: int = 1) -> PMPSpec:
    alphabet = tuple(Q)
    mats = {a: float(Q[a]) * np.eye(d) for a in alphabet}
    return PMPSpec(alphabet, mats, np.full(d, 1.0 / d))


def fm_word_prob_bruteforce(src: FMSpec, word: Sequence) -> float:
    """Direct sum over hidden paths; an independent oracle for small words."""
    idx = {h: i for i, h in enumerate(src.hidden)}
    total = 0.0
    cands = [[h for h in src.hidden if src.f[h] == a] for a in word]
    for path in itertools.product(*cands):
        pr = src.q[idx[path[0]]]
        for x, y in zip(path, path[1:]):
            pr *= src.Q[idx[x], idx[y]]
        total += pr
    return float(np.log(total)) if total > 0 else -np.inf
