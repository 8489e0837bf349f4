"""Quantum instruments, their unravelings, outcome reversal and assumption checks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, NamedTuple, Sequence

import numpy as np
import scipy.linalg

from . import linrep
from .numerics import EIGEN_TOL, spectral_radius

UNITALITY_TOL = 1e-12
INVARIANCE_TOL = 1e-10


class InstrumentError(ValueError):
    """An instrument violates one of its defining invariants."""


class CPMap:
    """Completely positive map X -> sum_i K_i^* X K_i given by Kraus operators.

    ``super`` is the Heisenberg superoperator in row-major vectorization,
    ``super_adjoint`` the Schrodinger (predual) one.
    """

    def __init__(self, kraus: Sequence[np.ndarray]):
        ops = [np.asarray(K, dtype=complex) for K in kraus]
        if not ops:
            raise ValueError("a CP map needs at least one Kraus operator")
        d = ops[0].shape[0]
        for K in ops:
            if K.shape != (d, d):
                raise ValueError("Kraus operators must be square and of equal size")
        self.kraus = tuple(ops)
        self.dim = d

    def __repr__(self):
        return f"CPMap(dim={self.dim}, n_kraus={len(self.kraus)})"

    @cached_property
    def super(self) -> np.ndarray:
        return sum(np.kron(K.conj().T, K.T) for K in self.kraus)

    @cached_property
    def super_adjoint(self) -> np.ndarray:
        return sum(np.kron(K, K.conj()) for K in self.kraus)

    @cached_property
    def pattern(self) -> np.ndarray:
        """Boolean zero pattern of the Schrodinger superoperator from Kraus patterns."""
        scale = max(float(np.max(np.abs(K))) for K in self.kraus)
        out = np.zeros((self.dim ** 2, self.dim ** 2), dtype=bool)
        for K in self.kraus:
            B = linrep.nonzero_pattern(K, scale).astype(np.int64)
            out |= np.kron(B, B) > 0
        return out

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=complex)
        return sum(K.conj().T @ X @ K for K in self.kraus)

    def adjoint(self, rho) -> np.ndarray:
        rho = np.asarray(rho, dtype=complex)
        return sum(K @ rho @ K.conj().T for K in self.kraus)

    def scaled(self, c: float) -> "CPMap":
        if c < 0:
            raise ValueError("a CP map can only be scaled by a nonnegative factor")
        return CPMap([np.sqrt(c) * K for K in self.kraus])

    @staticmethod
    def sum(maps: Sequence["CPMap"]) -> "CPMap":
        return CPMap([K for m in maps for K in m.kraus])

    def tensor(self, other: "CPMap") -> "CPMap":
        return CPMap([np.kron(K, L) for K in self.kraus for L in other.kraus])


class DensityCheck(NamedTuple):
    hermitian: bool
    positive: bool
    unit_trace: bool


def check_density(rho, tol: float = 1e-12) -> DensityCheck:
    rho = np.asarray(rho, dtype=complex)
    herm = np.max(np.abs(rho - rho.conj().T), initial=0.0) <= tol
    evals = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    return DensityCheck(bool(herm), bool(evals.min() >= -tol), bool(abs(np.trace(rho) - 1) <= tol))


def sqrtm_psd(rho: np.ndarray, power: float = 0.5) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    if power < 0 and w.min() <= 0:
        raise InstrumentError("density matrix is singular")
    w = np.clip(w, 0.0, None)
    return (v * w ** power) @ v.conj().T


@dataclass(frozen=True)
class Instrument:
    """Finite instrument with invariant state and alphabet involution.

    If ``rho`` is singular the instrument is compressed to the range of rho,
    which is invariant whenever rho is.
    """

    alphabet: tuple
    maps: Mapping
    rho: np.ndarray
    theta: Mapping
    delta_S: Mapping | None = None
    validate: bool = True
    restricted: bool = field(default=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "alphabet", tuple(self.alphabet))
        maps = {a: (m if isinstance(m, CPMap) else CPMap(m)) for a, m in dict(self.maps).items()}
        if set(maps) != set(self.alphabet):
            raise InstrumentError("maps must be given for exactly the alphabet symbols")
        theta = dict(self.theta) if self.theta is not None else {a: a for a in self.alphabet}
        rho = np.asarray(self.rho, dtype=complex)
        object.__setattr__(self, "maps", maps)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "rho", rho)
        if self.delta_S is not None:
            object.__setattr__(self, "delta_S", {a: float(self.delta_S[a]) for a in self.alphabet})
        if self.validate:
            self._validate()

    @property
    def dim(self) -> int:
        return self.rho.shape[0]

    def _validate(self):
        for a in self.alphabet:
            if self.theta.get(a) not in self.maps or self.theta[self.theta[a]] != a:
                raise InstrumentError("theta must be an involution of the alphabet")
        dc = check_density(self.rho, 1e-10)
        if not all(dc):
            raise InstrumentError(f"rho is not a density matrix: {dc}")
        total = self.total_map()
        d = total.dim
        if np.max(np.abs(total(np.eye(d)) - np.eye(d))) > 1e-10:
            raise InstrumentError("the sum of the maps is not unital")
        if np.max(np.abs(total.adjoint(self.rho) - self.rho)) > INVARIANCE_TOL:
            raise InstrumentError("rho is not invariant under the dual of the total map")
        w, v = np.linalg.eigh(0.5 * (self.rho + self.rho.conj().T))
        if w.min() <= EIGEN_TOL:
            keep = w > EIGEN_TOL
            V = v[:, keep]
            maps = {a: CPMap([V.conj().T @ K @ V for K in m.kraus]) for a, m in self.maps.items()}
            rho = V.conj().T @ self.rho @ V
            object.__setattr__(self, "maps", maps)
            object.__setattr__(self, "rho", rho / np.trace(rho).real)
            object.__setattr__(self, "restricted", True)

    def total_map(self) -> CPMap:
        return CPMap.sum([self.maps[a] for a in self.alphabet])

    @cached_property
    def rep(self) -> linrep.LinearRep:
        d = self.dim
        mats = [self.maps[a].super_adjoint.T for a in self.alphabet]
        final = np.eye(d).ravel().astype(complex)
        rep = linrep.from_matrices(self.alphabet, self.rho.ravel(), mats, final)
        pats = np.array([self.maps[a].pattern.T for a in self.alphabet])
        return linrep.LinearRep(rep.alphabet, rep.init, rep.mats, rep.final,
                                linrep.nonzero_pattern(self.rho.ravel()), pats,
                                linrep.nonzero_pattern(final))

    def to_json(self) -> dict:
        def enc(M):
            return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(M)]

        doc = {
            "dim": self.dim,
            "alphabet": list(self.alphabet),
            "kraus": {a: [enc(K) for K in self.maps[a].kraus] for a in self.alphabet},
            "rho": enc(self.rho),
            "theta": dict(self.theta),
        }
        if self.delta_S is not None:
            doc["delta_S"] = dict(self.delta_S)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "Instrument":
        def dec(M):
            arr = np.asarray(M, dtype=float)
            return arr[..., 0] + 1j * arr[..., 1]

        alphabet = [str(a) for a in doc["alphabet"]]
        kraus = doc["kraus"]
        maps = {a: CPMap([dec(K) for K in kraus[a]]) for a in alphabet}
        rho = dec(doc["rho"]) if "rho" in doc and doc["rho"] is not None else None
        if rho is None:
            rho = invariant_state(CPMap.sum(list(maps.values()))).rho
        return cls(alphabet, maps, rho, doc.get("theta") or {a: a for a in alphabet},
                   doc.get("delta_S"))

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def unraveling_prob(inst: Instrument, word: Sequence) -> float:
    """log tr(rho Phi_{w1} o ... o Phi_{wT}[1]); -inf off the (symbolic) support."""
    if len(word) == 0:
        return 0.0
    return inst.rep.log_prob(word)


class InvariantState(NamedTuple):
    rho: np.ndarray
    unique: bool


def invariant_state(phi: CPMap) -> InvariantState:
    """A density matrix fixed by the dual of a unital CP map, with a uniqueness flag."""
    d = phi.dim
    S = phi.super_adjoint
    res = spectral_radius(S, cone_start=np.eye(d).ravel() / d)
    rho = res.right_vec.reshape(d, d)
    rho = 0.5 * (rho + rho.conj().T)
    tr = np.trace(rho).real
    if abs(tr) < 1e-300:
        raise InstrumentError("dominant eigenvector has zero trace")
    rho = rho / tr
    sv = np.linalg.svd(S - np.eye(d * d), compute_uv=False)
    nullity = int(np.sum(sv <= 1e-10 * max(1.0, sv.max())))
    return InvariantState(rho, nullity <= 1)


def or_instrument(inst: Instrument) -> Instrument:
    """Outcome-reversed instrument with Kraus operators rho^(1/2) K^* rho^(-1/2)."""
    half = sqrtm_psd(inst.rho, 0.5)
    inv_half = sqrtm_psd(inst.rho, -0.5)
    maps = {}
    for a in inst.alphabet:
        src = inst.maps[inst.theta[a]]
        maps[a] = CPMap([half @ K.conj().T @ inv_half for K in src.kraus])
    dS = None
    if inst.delta_S is not None:
        dS = {a: -inst.delta_S[inst.theta[a]] for a in inst.alphabet}
    return Instrument(inst.alphabet, maps, inst.rho, inst.theta, dS)


def _unital_algebra_dim(ops: Sequence[np.ndarray]) -> int:
    """Dimension of the unital algebra generated by ``ops`` (Burnside test)."""
    d = ops[0].shape[0]
    basis = np.eye(d, dtype=complex).reshape(1, -1)
    basis = basis / np.linalg.norm(basis)
    frontier = [np.eye(d, dtype=complex)]
    scale = max(1.0, max(float(np.max(np.abs(K))) for K in ops))
    while frontier:
        new = []
        for A in frontier:
            for K in ops:
                B = (A @ K) / scale
                v = B.ravel()
                r = v - basis.T @ (basis.conj() @ v)
                nr = np.linalg.norm(r)
                if nr > 1e-9 * max(1.0, np.linalg.norm(v)):
                    r = r / nr
                    r = r - basis.T @ (basis.conj() @ r)
                    r = r / np.linalg.norm(r)
                    basis = np.vstack([basis, r])
                    new.append(B)
                    if basis.shape[0] == d * d:
                        return d * d
        frontier = new
    return basis.shape[0]


def is_irreducible(phi: CPMap) -> bool:
    """Irreducibility of a CP map.

    The Kraus operators must have no common nontrivial invariant subspace, which
    by Burnside's theorem means they generate the full matrix algebra.  This is
    equivalent to (1 + Phi)^(d-1) being positivity improving.
    """
    if phi.dim == 1:
        return True
    return _unital_algebra_dim(phi.kraus) == phi.dim ** 2


def positivity_improving_power(phi: CPMap, vectors: np.ndarray) -> float:
    """Smallest eigenvalue, relative to the trace, of ((1+Phi*)/2)^(d-1)[|v><v|].

    Evaluated over the given vectors.  Used to cross-check ``is_irreducible``.
    """
    d = phi.dim
    worst = np.inf
    for v in vectors:
        v = np.asarray(v, dtype=complex)
        X = np.outer(v, v.conj())
        for _ in range(max(d - 1, 1)):
            X = 0.5 * (X + phi.adjoint(X))
        w = np.linalg.eigvalsh(0.5 * (X + X.conj().T))
        worst = min(worst, w.min() / max(np.trace(X).real, 1e-300))
    return float(worst)


@dataclass(frozen=True)
class AssumptionReport:
    A: bool
    B: bool
    C_sufficient: bool
    T_max: int
    note: str = "C_sufficient is a sufficient condition only"

    def as_dict(self) -> dict:
        return {"A": self.A, "B": self.B, "C_sufficient": self.C_sufficient,
                "T_max": self.T_max, "note": self.note}


def supports_agree(rep: linrep.LinearRep, rep_hat: linrep.LinearRep, T_max: int) -> bool:
    """Compare supp P_T and supp Phat_T for all T <= T_max by boolean products."""
    k = len(rep.alphabet)
    pa = rep.mat_patterns.astype(np.int32)
    pb = rep_hat.mat_patterns.astype(np.int32)
    a = rep.init_pattern[None, :].astype(np.int32)
    b = rep_hat.init_pattern[None, :].astype(np.int32)
    for _ in range(T_max):
        a = (np.einsum("ni,kij->kni", a, pa) > 0).reshape(-1, pa.shape[1]).astype(np.int32)
        b = (np.einsum("ni,kij->kni", b, pb) > 0).reshape(-1, pb.shape[1]).astype(np.int32)
        sa = (a.astype(bool) & rep.final_pattern).any(axis=1)
        sb = (b.astype(bool) & rep_hat.final_pattern).any(axis=1)
        if not np.array_equal(sa, sb):
            return False
        keep = sa | (a.any(axis=1)) | (b.any(axis=1))
        a, b = a[keep], b[keep]
        if a.shape[0] == 0:
            break
    return True


def check_assumptions(inst: Instrument, T_max: int = 6) -> AssumptionReport:
    total = inst.total_map()
    d = inst.dim
    unital = np.max(np.abs(total(np.eye(d)) - np.eye(d))) <= 1e-10
    invariant = np.max(np.abs(total.adjoint(inst.rho) - inst.rho)) <= INVARIANCE_TOL
    faithful = np.linalg.eigvalsh(0.5 * (inst.rho + inst.rho.conj().T)).min() > EIGEN_TOL
    A = bool(unital and invariant and faithful)
    hat = or_instrument(inst)
    B = supports_agree(inst.rep, hat.rep, T_max)
    psi = CPMap.sum([inst.maps[a].tensor(hat.maps[a]) for a in inst.alphabet])
    C = is_irreducible(psi)
    return AssumptionReport(A, bool(B), bool(C), T_max)
