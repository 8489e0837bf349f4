"""Constructors for the instrument families together with their closed-form oracles.

Spin models are built from their Hamiltonians.  Closed-form propagators are
checked against ``matrix_exponential`` and the instrument maps are obtained
from the propagator blocks by the one-time or two-time probe formulas.  When
every map preserves the diagonal, the accompanying PMP spec is emitted from
its closed-form matrices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.optimize

from .instrument import CPMap, Instrument, invariant_state
from .numerics import matrix_exponential, spectral_radius
from .pmp import PMPSpec, bernoulli_pmp, canonical_instrument, markov_pmp

PROPAGATOR_TOL = 1e-10
DEGENERATE_TOL = 1e-14

FAMILIES = (
    "bernoulli", "markov", "von_neumann", "keep_switch",
    "xxz_one_time", "xxz_two_time", "xxz_random_thermal", "xxz_multi_thermal",
    "x00_one_time", "x00_two_time", "x00_random_thermal", "rotational",
)
TWO_TIME_FAMILIES = ("xxz_two_time", "xxz_random_thermal", "xxz_multi_thermal",
                     "x00_two_time", "x00_random_thermal")
QUANTITIES = ("ep", "pressure", "clt_variance", "invariant_p")

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.diag([1.0, -1.0]).astype(complex)
SIGMA_RAISE = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_LOWER = SIGMA_RAISE.T.copy()
PROJ_UP = np.diag([1.0, 0.0]).astype(complex)
PROJ_DOWN = np.diag([0.0, 1.0]).astype(complex)
SPINS = ("+", "-")
SPIN_SIGN = {"+": 1, "-": -1}


class ParameterError(ValueError):
    """Family parameters are missing or outside their admissible range."""


class UndefinedQuantityError(ValueError):
    """The requested closed-form quantity is not available for this family."""


class PropagatorMismatchError(RuntimeError):
    """A closed-form propagator disagrees with the numerical exponential."""


# ---------------------------------------------------------------- parameters


def _as_complex_matrix(M) -> np.ndarray:
    arr = np.asarray(M)
    if arr.dtype.kind in "fiu" and arr.ndim == 3 and arr.shape[-1] == 2:
        return arr[..., 0] + 1j * arr[..., 1]
    return np.asarray(M, dtype=complex)


def _get(params: Mapping, *names, default=None, required=True):
    for n in names:
        if n in params and params[n] is not None:
            return params[n]
    if required and default is None:
        raise ParameterError(f"missing parameter {names[0]!r}")
    return default


def eta_from_beta(beta: float, epsilon: float) -> float:
    return 0.5 * float(np.tanh(beta * epsilon / 2))


def beta_from_eta(eta: float, epsilon: float) -> float:
    if not -0.5 < eta < 0.5:
        raise ParameterError("a finite inverse temperature needs |eta| < 1/2")
    return 2.0 / epsilon * float(np.arctanh(2 * eta))


def xxz_s(epsilon: float, omega: float, lam: float, t: float) -> float:
    """Transition weight s = (lambda sin(delta t) / delta)^2 of the XXZ models."""
    delta = np.hypot((epsilon - omega) / 2, lam)
    return float((lam * np.sin(delta * t) / delta) ** 2)


def t_for_xxz_s(s: float, epsilon: float, omega: float, lam: float) -> float:
    """Smallest t > 0 with xxz_s(epsilon, omega, lam, t) = s."""
    delta = np.hypot((epsilon - omega) / 2, lam)
    ceiling = (lam / delta) ** 2
    if not 0 <= s <= ceiling * (1 + 1e-15):
        raise ParameterError(f"s={s} is not reachable; the maximum is {ceiling}")
    if s == 0:
        return float(np.pi / delta)
    return float(np.arcsin(min(1.0, np.sqrt(s / ceiling))) / delta)


def x00_s_pair(epsilon: float, omega: float, lam: float, t: float) -> tuple[float, float]:
    """(s_plus, s_minus) of the X00 models."""
    out = []
    for sign in (1, -1):
        root = np.sqrt(lam ** 2 + (omega + sign * epsilon) ** 2)
        out.append(float((lam * np.sin(t * root / 2) / root) ** 2))
    return out[0], out[1]


def physical_for_x00_s_pair(s_plus: float, s_minus: float, epsilon: float = 1.0,
                            max_branches: int = 400) -> dict:
    """Physical (omega, lambda, t) realizing a target (s_plus, s_minus).

    Uses omega = epsilon, so that s_minus = sin^2(tau) with tau = lambda t / 2,
    and locates the bandwidth x = 2 epsilon / lambda by bracketing and Brent
    bisection of sin^2(tau sqrt(1+x^2)) / (1+x^2) = s_plus.
    """
    if not (0 <= s_minus <= 1 and 0 <= s_plus < 1):
        raise ParameterError("need s_minus in [0,1] and s_plus in [0,1[")
    if epsilon <= 0:
        raise ParameterError("epsilon must be positive")
    base = float(np.arcsin(np.sqrt(s_minus)))

    def g(x, tau):
        u = np.sqrt(1 + x * x)
        return np.sin(tau * u) ** 2 / (1 + x * x)

    for k in range(max_branches):
        taus = {base + k * np.pi, np.pi - base + k * np.pi}
        for tau in sorted(tau for tau in taus if tau > 0):
            if s_plus == 0:
                m = int(np.floor(tau / np.pi)) + 1
                x = float(np.sqrt((m * np.pi / tau) ** 2 - 1))
            else:
                x_max = np.sqrt(1 / s_plus - 1)
                grid = np.linspace(x_max * 1e-9, x_max, 4001)
                vals = g(grid, tau) - s_plus
                flips = np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)
                if flips.size == 0:
                    continue
                i = flips[0]
                if vals[i] == 0:
                    x = float(grid[i])
                else:
                    x = float(scipy.optimize.brentq(lambda z: g(z, tau) - s_plus, grid[i], grid[i + 1],
                                                    xtol=1e-15, rtol=4 * np.finfo(float).eps))
            lam = 2 * epsilon / x
            t = 2 * tau / lam
            sp, sm = x00_s_pair(epsilon, epsilon, lam, t)
            if abs(sp - s_plus) < 1e-12 and abs(sm - s_minus) < 1e-12:
                return {"epsilon": epsilon, "omega": epsilon, "lambda": lam, "t": t}
    raise ParameterError(f"could not realize (s_plus, s_minus) = ({s_plus}, {s_minus})")


def _positive(params, *names):
    val = float(_get(params, *names))
    if not val > 0:
        raise ParameterError(f"{names[0]} must be positive")
    return val


def _thermal_weights(params) -> tuple[np.ndarray, np.ndarray]:
    betas = np.asarray(_get(params, "betas"), dtype=float).ravel()
    weights = params.get("weights")
    weights = (np.full(betas.size, 1.0 / betas.size) if weights is None
               else np.asarray(weights, dtype=float).ravel())
    if betas.size == 0 or weights.shape != betas.shape:
        raise ParameterError("betas and weights must be non-empty and of equal length")
    if np.any(weights <= 0) or abs(weights.sum() - 1) > 1e-12:
        raise ParameterError("weights must be positive and sum to 1")
    return betas, weights


@dataclass(frozen=True)
class FamilyParams:
    """A family tag plus its parameter record, normalized and range-checked."""

    family: str
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        object.__setattr__(self, "params", _normalize(self.family, dict(self.params)))

    def to_json(self) -> dict:
        def enc(v):
            if isinstance(v, np.ndarray):
                if np.iscomplexobj(v):
                    return np.stack([v.real, v.imag], axis=-1).tolist()
                return v.tolist()
            if isinstance(v, dict):
                return {k: enc(x) for k, x in v.items()}
            return v

        return {"family": self.family, "params": {k: enc(v) for k, v in self.params.items()}}

    @classmethod
    def from_json(cls, doc) -> "FamilyParams":
        if isinstance(doc, str):
            doc = json.loads(doc)
        if "family" not in doc:
            raise ParameterError("config needs a 'family' entry")
        return cls(doc["family"], doc.get("params", {}))


def _spin_common(p: dict, with_mu: bool) -> dict:
    out = {"epsilon": _positive(p, "epsilon"), "omega": _positive(p, "omega"),
           "lambda": _positive(p, "lambda", "lam")}
    if with_mu:
        out["mu"] = float(_get(p, "mu", default=0.0, required=False) or 0.0)
    return out


def _probe_state(p: dict, out: dict, allow_pure: bool) -> None:
    if p.get("beta") is not None:
        out["beta"] = float(p["beta"])
        out["eta"] = eta_from_beta(out["beta"], out["epsilon"])
    else:
        out["eta"] = float(_get(p, "eta"))
    lo_ok = -0.5 <= out["eta"] <= 0.5 if allow_pure else -0.5 < out["eta"] < 0.5
    if not lo_ok:
        raise ParameterError("eta is outside its admissible range")


def _theta_kind(p: dict) -> str:
    kind = p.get("theta", "flip")
    if kind not in ("flip", "identity"):
        raise ParameterError("theta must be 'flip' or 'identity' for one-time families")
    return kind


def _normalize(family: str, p: dict) -> dict:
    if family == "bernoulli":
        Q = {str(a): float(v) for a, v in dict(_get(p, "Q")).items()}
        if any(v < 0 for v in Q.values()) or abs(sum(Q.values()) - 1) > 1e-12:
            raise ParameterError("Q must be a probability mass function")
        out = {"Q": Q, "d": int(p.get("d", 1))}
        if p.get("theta") is not None:
            out["theta"] = {str(a): str(b) for a, b in dict(p["theta"]).items()}
        return out
    if family == "markov":
        P = np.asarray(_get(p, "P"), dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or np.any(P < 0):
            raise ParameterError("P must be a square nonnegative matrix")
        if np.max(np.abs(P.sum(axis=1) - 1)) > 1e-12:
            raise ParameterError("P must be right-stochastic")
        out = {"P": P}
        if p.get("p") is not None:
            out["p"] = np.asarray(p["p"], dtype=float)
        alphabet = p.get("alphabet") or [str(i) for i in range(P.shape[0])]
        out["alphabet"] = [str(a) for a in alphabet]
        if p.get("theta") is not None:
            out["theta"] = {str(a): str(b) for a, b in dict(p["theta"]).items()}
        return out
    if family == "von_neumann":
        U = _as_complex_matrix(_get(p, "unitary"))
        d = U.shape[0]
        if U.shape != (d, d) or np.max(np.abs(U.conj().T @ U - np.eye(d))) > 1e-12:
            raise ParameterError("unitary must be a square unitary matrix")
        basis = _as_complex_matrix(p["basis"]) if p.get("basis") is not None else np.eye(d)
        if basis.shape != (d, d) or np.max(np.abs(basis.conj().T @ basis - np.eye(d))) > 1e-12:
            raise ParameterError("basis must be a unitary matrix whose columns are the basis")
        out = {"unitary": U, "basis": basis}
        if p.get("theta") is not None:
            out["theta"] = {str(a): str(b) for a, b in dict(p["theta"]).items()}
        return out
    if family == "keep_switch":
        q1, q2 = float(_get(p, "q1")), float(_get(p, "q2"))
        if not (0 < q1 < 1 and 0 < q2 < 1):
            raise ParameterError("q1 and q2 must lie in ]0,1[")
        return {"q1": q1, "q2": q2}
    if family == "rotational":
        delta = float(_get(p, "delta"))
        if not 0 <= delta < 2:
            raise ParameterError("delta must lie in [0,2[")
        return {"delta": delta}
    if family in ("xxz_one_time", "xxz_two_time", "xxz_random_thermal", "xxz_multi_thermal"):
        out = _spin_common(p, with_mu=True)
        if p.get("t") is not None:
            out["t"] = _positive(p, "t")
        elif p.get("s") is not None:
            out["t"] = t_for_xxz_s(float(p["s"]), out["epsilon"], out["omega"], out["lambda"])
        else:
            raise ParameterError("missing parameter 't' (or a target 's')")
        if family == "xxz_one_time":
            _probe_state(p, out, allow_pure=False)
            out["theta"] = _theta_kind(p)
        elif family == "xxz_two_time":
            _probe_state(p, out, allow_pure=False)
            out["beta"] = beta_from_eta(out["eta"], out["epsilon"])
        elif family == "xxz_random_thermal":
            out["betas"], out["weights"] = _thermal_weights(p)
        else:
            betas = np.asarray(_get(p, "betas"), dtype=float).ravel()
            if betas.size != 2:
                raise ParameterError("the multi-thermal family is defined for two sub-probes")
            out["betas"] = betas
        return out
    if family in ("x00_one_time", "x00_two_time", "x00_random_thermal"):
        if p.get("s_plus") is not None or p.get("s_minus") is not None:
            eps = float(p.get("epsilon", 1.0))
            out = physical_for_x00_s_pair(float(_get(p, "s_plus")), float(_get(p, "s_minus")), eps)
        else:
            out = _spin_common(p, with_mu=False)
            out["t"] = _positive(p, "t")
        if family == "x00_one_time":
            _probe_state(p, out, allow_pure=True)
            out["theta"] = _theta_kind(p)
        elif family == "x00_two_time":
            out["beta"] = float(_get(p, "beta"))
            out["eta"] = eta_from_beta(out["beta"], out["epsilon"])
        else:
            out["betas"], out["weights"] = _thermal_weights(p)
        return out
    raise ParameterError(f"unknown family {family!r}")


# ---------------------------------------------------------------- propagators


def xxz_hamiltonian(epsilon, omega, lam, mu) -> np.ndarray:
    """Probe-first total Hamiltonian of the spin-1/2 XXZ model."""
    one = np.eye(2)
    return (np.kron(epsilon / 2 * SIGMA_Z, one) + np.kron(one, omega / 2 * SIGMA_Z)
            + lam / 2 * (np.kron(SIGMA_X, SIGMA_X) + np.kron(SIGMA_Y, SIGMA_Y))
            + mu / 2 * np.kron(SIGMA_Z, SIGMA_Z))


def xxz_propagator(epsilon, omega, lam, mu, t) -> np.ndarray:
    """Closed-form probe-first propagator exp(-itH) of the spin-1/2 XXZ model."""
    nu = {1: (epsilon - omega) + 2 * mu, -1: (epsilon - omega) - 2 * mu}
    delta = np.hypot((epsilon - omega) / 2, lam)
    sinc = np.sin(t * delta) / delta
    proj = {1: PROJ_UP, -1: PROJ_DOWN}
    V = {}
    for s in (1, -1):
        V[(s, s)] = (np.exp(-s * 1j * t * (omega + nu[s]) / 2) * proj[s]
                     + np.exp(s * 1j * t * omega / 2)
                     * (np.cos(t * delta) - s * 1j * (epsilon - omega) / 2 * sinc) * proj[-s])
    V[(-1, 1)] = lam * np.exp(-1j * t * omega / 2) * sinc * SIGMA_RAISE
    V[(1, -1)] = lam * np.exp(1j * t * omega / 2) * sinc * SIGMA_LOWER
    pref = np.exp(1j * t * mu / 2)
    return pref * np.block([
        [np.exp(-1j * t * omega / 2) * V[(1, 1)], -1j * np.exp(-1j * t * omega / 2) * V[(1, -1)]],
        [-1j * np.exp(1j * t * omega / 2) * V[(-1, 1)], np.exp(1j * t * omega / 2) * V[(-1, -1)]],
    ])


def x00_hamiltonian(epsilon, omega, lam) -> np.ndarray:
    one = np.eye(2)
    return (np.kron(epsilon / 2 * SIGMA_Z, one) + np.kron(one, omega / 2 * SIGMA_Z)
            + lam / 2 * np.kron(SIGMA_X, SIGMA_X))


def x00_propagator(epsilon, omega, lam, t) -> np.ndarray:
    """Closed-form probe-first propagator of the X00 model."""
    blocks = {}
    for s in (1, -1):
        detuning = omega * np.array([1.0, -1.0]) + s * epsilon
        freq = np.sqrt(lam ** 2 + detuning ** 2)
        blocks[(s, s)] = np.diag(np.cos(freq * t / 2) - 1j * detuning / freq * np.sin(freq * t / 2))
        blocks[(s, -s)] = -1j * lam * np.diag(np.sin(freq * t / 2) / freq) @ SIGMA_X
    return np.block([[blocks[(1, 1)], blocks[(1, -1)]], [blocks[(-1, 1)], blocks[(-1, -1)]]])


def _spin_one():
    lower = np.sqrt(2) * np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=complex)
    proj = {k: np.diag(np.eye(3)[i]).astype(complex) for i, k in enumerate("+0-")}
    return lower.T.copy(), lower, np.diag([1.0, 0.0, -1.0]).astype(complex), proj


def _singlet_triplet_basis() -> np.ndarray:
    """Columns: system (+,-) with the probe singlet, then system (+,-) with triplet (+,0,-)."""
    up, dn = np.eye(2)
    triplet = [np.kron(up, up), (np.kron(up, dn) + np.kron(dn, up)) / np.sqrt(2), np.kron(dn, dn)]
    singlet = (np.kron(up, dn) - np.kron(dn, up)) / np.sqrt(2)
    cols = [np.kron(up, singlet), np.kron(dn, singlet)]
    cols += [np.kron(up, v) for v in triplet] + [np.kron(dn, v) for v in triplet]
    return np.array(cols, dtype=complex).T


def multi_thermal_block_hamiltonian(epsilon, omega, lam, mu) -> np.ndarray:
    """Block Hamiltonian on (system x singlet) + (system x triplet), standard spin-1 ladders."""
    raise_, lower, Sz, _ = _spin_one()
    H = np.zeros((8, 8), dtype=complex)
    H[:2, :2] = omega / 2 * SIGMA_Z
    H[2:5, 2:5] = (epsilon + mu) * Sz + omega / 2 * np.eye(3)
    H[2:5, 5:8] = np.sqrt(2) * lam * lower
    H[5:8, 2:5] = np.sqrt(2) * lam * raise_
    H[5:8, 5:8] = (epsilon - mu) * Sz - omega / 2 * np.eye(3)
    return H


def multi_thermal_hamiltonian(epsilon, omega, lam, mu) -> np.ndarray:
    """System-first Hamiltonian on C^2 x C^2 x C^2 equal to the block Hamiltonian.

    The flip-flop coupling of each sub-probe is sqrt(2) lambda / 2.
    """
    W = _singlet_triplet_basis()
    return W @ multi_thermal_block_hamiltonian(epsilon, omega, lam, mu) @ W.conj().T


def multi_thermal_block_propagator(epsilon, omega, lam, mu, t) -> np.ndarray:
    """Closed-form propagator in the singlet/triplet block basis."""
    _, lower, _, proj = _spin_one()
    raise_ = lower.conj().T
    nu = {1: 0.5 * (omega - epsilon + mu), -1: 0.5 * (omega - epsilon - mu)}
    delta = {s: np.sqrt(4 * lam ** 2 + nu[s] ** 2) for s in (1, -1)}

    def rot(s, sign):
        return np.cos(t * delta[s]) - sign * 1j * nu[s] / delta[s] * np.sin(t * delta[s])

    key = {1: "+", -1: "-"}
    U = np.zeros((8, 8), dtype=complex)
    U[:2, :2] = np.diag(np.exp(-1j * t * omega / 2 * np.array([1.0, -1.0])))
    blocks = {}
    for s in (1, -1):
        blocks[(s, s)] = (np.exp(-s * 1j * t * (omega / 2 + epsilon + s * mu)) * proj[key[s]]
                          + np.exp(1j * t * (mu - s * epsilon) / 2) * rot(s, s) * proj["0"]
                          + np.exp(1j * t * (mu + s * epsilon) / 2) * rot(-s, s) * proj[key[-s]])
        ladder = lower if s == 1 else raise_
        blocks[(s, -s)] = (-1j * np.sqrt(2) * lam / delta[s] * np.exp(1j * t * (mu - s * epsilon) / 2)
                           * np.sin(t * delta[s]) * proj["0"] @ ladder
                           - 1j * np.sqrt(2) * lam / delta[-s] * np.exp(1j * t * (mu + s * epsilon) / 2)
                           * np.sin(t * delta[-s]) * proj[key[-s]] @ ladder)
    U[2:5, 2:5], U[2:5, 5:8] = blocks[(1, 1)], blocks[(1, -1)]
    U[5:8, 2:5], U[5:8, 5:8] = blocks[(-1, 1)], blocks[(-1, -1)]
    return U


def multi_thermal_propagator(epsilon, omega, lam, mu, t) -> np.ndarray:
    W = _singlet_triplet_basis()
    return W @ multi_thermal_block_propagator(epsilon, omega, lam, mu, t) @ W.conj().T


def propagator_deviation(family: str, params: Mapping) -> float:
    """max |closed-form U - matrix_exponential(H, t)| for a spin family."""
    p = params
    if family.startswith("xxz_multi"):
        args = (p["epsilon"], p["omega"], p["lambda"], p["mu"])
        H = multi_thermal_block_hamiltonian(*args)
        U = multi_thermal_block_propagator(*args, p["t"])
    elif family.startswith("xxz"):
        args = (p["epsilon"], p["omega"], p["lambda"], p["mu"])
        H, U = xxz_hamiltonian(*args), xxz_propagator(*args, p["t"])
    elif family.startswith("x00"):
        args = (p["epsilon"], p["omega"], p["lambda"])
        H, U = x00_hamiltonian(*args), x00_propagator(*args, p["t"])
    else:
        raise ParameterError(f"{family} has no propagator")
    return float(np.max(np.abs(U - matrix_exponential(H, p["t"]))))


def _checked(U_closed: np.ndarray, H: np.ndarray, t: float) -> np.ndarray:
    dev = float(np.max(np.abs(U_closed - matrix_exponential(H, t))))
    if dev > PROPAGATOR_TOL:
        raise PropagatorMismatchError(f"closed-form propagator off by {dev:.3e}")
    return U_closed


# ---------------------------------------------------------------- probe instruments


def _probe_first_blocks(U: np.ndarray, d_probe: int, d_sys: int) -> dict:
    R = U.reshape(d_probe, d_sys, d_probe, d_sys)
    return {(i, j): R[i, :, j, :] for i in range(d_probe) for j in range(d_probe)}


def _system_first_blocks(U: np.ndarray, d_sys: int, d_probe: int) -> dict:
    R = U.reshape(d_sys, d_probe, d_sys, d_probe)
    return {(i, j): R[:, i, :, j] for i in range(d_probe) for j in range(d_probe)}


def one_time_maps(blocks: Mapping, weights: Sequence[float]) -> list:
    """Phi_a[X] = sum_j pi_j U_aj^* X U_aj for a rank-one probe basis."""
    n = len(weights)
    maps = []
    for a in range(n):
        kraus = [np.sqrt(weights[j]) * blocks[(a, j)] for j in range(n) if weights[j] > 0]
        maps.append(CPMap(kraus))
    return maps


def two_time_maps(blocks: Mapping, weights: Sequence[float]) -> dict:
    """Phi_(l,l')[X] = pi_l U_l'l^* X U_l'l for a rank-one probe basis."""
    n = len(weights)
    return {(l, lp): CPMap([np.sqrt(weights[l]) * blocks[(lp, l)]])
            for l in range(n) for lp in range(n)}


def diagonal_pmp(inst: Instrument, tol: float = 1e-12) -> PMPSpec:
    """PMP spec of an instrument whose maps preserve diagonal matrices."""
    d = inst.dim
    mats = {}
    for a in inst.alphabet:
        m = np.zeros((d, d))
        for j in range(d):
            E = np.zeros((d, d), dtype=complex)
            E[j, j] = 1
            out = inst.maps[a](E)
            if np.max(np.abs(out - np.diag(np.diag(out)))) > tol:
                raise ParameterError("the instrument does not preserve diagonal matrices")
            m[:, j] = np.diag(out).real
        mats[a] = np.clip(m, 0.0, None)
    if np.max(np.abs(inst.rho - np.diag(np.diag(inst.rho)))) > tol:
        raise ParameterError("the invariant state is not diagonal")
    return PMPSpec(inst.alphabet, mats, np.diag(inst.rho).real)


# ---------------------------------------------------------------- build results


@dataclass
class BuiltFamily:
    """Constructor output; unpacks as ``instrument, pmp``."""

    instrument: Instrument
    pmp: PMPSpec | None
    theta: dict
    delta_S: dict | None = None
    degenerate: str | None = None
    params: dict = field(default_factory=dict)

    def __iter__(self):
        yield self.instrument
        yield self.pmp


def _thermal_pi(beta: float, epsilon: float) -> np.ndarray:
    """Occupations of the probe levels (+eps/2, -eps/2) at inverse temperature beta."""
    z = 2 * np.cosh(beta * epsilon / 2)
    return np.array([np.exp(-beta * epsilon / 2) / z, np.exp(beta * epsilon / 2) / z])


def _two_time_alphabet(prefix: str = "") -> list:
    return [prefix + u + v for u in SPINS for v in SPINS]


def _swap_theta(labels: Sequence[str]) -> dict:
    return {a: a[:-2] + a[-1] + a[-2] for a in labels}


def _confirm_state(inst_maps: dict, rho_closed: np.ndarray, degenerate: bool) -> np.ndarray:
    if degenerate:
        return rho_closed
    inv = invariant_state(CPMap.sum(list(inst_maps.values())))
    if inv.unique and np.max(np.abs(inv.rho - rho_closed)) > 1e-9:
        raise ParameterError("closed-form invariant state disagrees with the spectral one")
    return rho_closed


def build_instrument(fp: FamilyParams | Mapping) -> BuiltFamily:
    """Instrument (with invariant state) and, where available, its PMP spec."""
    if not isinstance(fp, FamilyParams):
        fp = FamilyParams.from_json(fp)
    return _BUILDERS[fp.family](fp.params)


def _build_bernoulli(p):
    spec = bernoulli_pmp(p["Q"], p["d"])
    theta = p.get("theta") or {a: a for a in spec.alphabet}
    return BuiltFamily(canonical_instrument(spec, theta), spec, theta, params=p)


def _build_markov(p):
    spec = markov_pmp(p["P"], p.get("p"), p["alphabet"])
    theta = p.get("theta") or {a: a for a in spec.alphabet}
    return BuiltFamily(canonical_instrument(spec, theta), spec, theta, params=p)


def von_neumann_markov_matrix(U: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """p_xy = tr(P_y U P_x U^*) = |<v_y|U|v_x>|^2."""
    return np.abs(basis.conj().T @ U @ basis).T ** 2


def _build_von_neumann(p):
    U, basis = p["unitary"], p["basis"]
    d = U.shape[0]
    alphabet = [str(i) for i in range(d)]
    maps = {}
    for i, a in enumerate(alphabet):
        v = basis[:, i:i + 1]
        maps[a] = CPMap([v @ v.conj().T @ U])
    theta = p.get("theta") or {a: a for a in alphabet}
    inst = Instrument(alphabet, maps, np.eye(d) / d, theta)
    P = von_neumann_markov_matrix(U, basis)
    P = P / P.sum(axis=1, keepdims=True)
    spec = markov_pmp(P, np.full(d, 1.0 / d), alphabet)
    return BuiltFamily(inst, spec, theta, params=p)


def _build_keep_switch(p):
    from .keepswitch import KSParams, ks_pmp

    spec = ks_pmp(KSParams(p["q1"], p["q2"]))
    theta = {"K": "S", "S": "K"}
    degenerate = "bernoulli" if p["q1"] == p["q2"] else None
    return BuiltFamily(canonical_instrument(spec, theta), spec, theta,
                       degenerate=degenerate, params=p)


def _one_time_theta(kind: str) -> dict:
    return {"+": "-", "-": "+"} if kind == "flip" else {"+": "+", "-": "-"}


def _build_xxz_one_time(p):
    args = (p["epsilon"], p["omega"], p["lambda"], p["mu"])
    U = _checked(xxz_propagator(*args, p["t"]), xxz_hamiltonian(*args), p["t"])
    eta = p["eta"]
    pi = [0.5 - eta, 0.5 + eta]
    maps = dict(zip(SPINS, one_time_maps(_probe_first_blocks(U, 2, 2), pi)))
    rho = np.diag(pi).astype(complex)
    rho = _confirm_state(maps, rho, False)
    theta = _one_time_theta(p["theta"])
    inst = Instrument(SPINS, maps, rho, theta)
    spec = bernoulli_pmp({"+": 0.5 - eta, "-": 0.5 + eta})
    return BuiltFamily(inst, spec, theta, params=p)


def _xxz_two_time_matrices(s: float, p_up: float) -> dict:
    return {
        "++": p_up * np.diag([1.0, 1 - s]),
        "--": (1 - p_up) * np.diag([1 - s, 1.0]),
        "+-": p_up * np.array([[0.0, 0.0], [s, 0.0]]),
        "-+": (1 - p_up) * np.array([[0.0, s], [0.0, 0.0]]),
    }


def _xxz_degenerate(s: float) -> str | None:
    if s <= DEGENERATE_TOL:
        return "any-state-invariant"
    if s >= 1 - DEGENERATE_TOL:
        return "markov"
    return None


def _thermal_delta_S(pi: np.ndarray, prefix: str = "") -> dict:
    logs = {"+": np.log(pi[0]), "-": np.log(pi[1])}
    return {prefix + u + v: float(logs[u] - logs[v]) for u in SPINS for v in SPINS}


def _build_xxz_two_time(p):
    args = (p["epsilon"], p["omega"], p["lambda"], p["mu"])
    U = _checked(xxz_propagator(*args, p["t"]), xxz_hamiltonian(*args), p["t"])
    pi = _thermal_pi(p["beta"], p["epsilon"])
    raw = two_time_maps(_probe_first_blocks(U, 2, 2), pi)
    maps = {SPINS[l] + SPINS[lp]: m for (l, lp), m in raw.items()}
    s = xxz_s(p["epsilon"], p["omega"], p["lambda"], p["t"])
    degenerate = _xxz_degenerate(s)
    rho = _confirm_state(maps, np.diag(pi).astype(complex), degenerate == "any-state-invariant")
    labels = _two_time_alphabet()
    theta = _swap_theta(labels)
    dS = _thermal_delta_S(pi)
    inst = Instrument(labels, maps, rho, theta, dS)
    spec = PMPSpec(labels, _xxz_two_time_matrices(s, pi[0]), pi)
    return BuiltFamily(inst, spec, theta, dS, degenerate, params=p)


def _build_xxz_random_thermal(p):
    args = (p["epsilon"], p["omega"], p["lambda"], p["mu"])
    U = _checked(xxz_propagator(*args, p["t"]), xxz_hamiltonian(*args), p["t"])
    blocks = _probe_first_blocks(U, 2, 2)
    s = xxz_s(p["epsilon"], p["omega"], p["lambda"], p["t"])
    maps, mats, dS, labels = {}, {}, {}, []
    p_up = 0.0
    for k, (beta, w) in enumerate(zip(p["betas"], p["weights"]), start=1):
        pi = _thermal_pi(beta, p["epsilon"])
        p_up += w * pi[0]
        for (l, lp), m in two_time_maps(blocks, pi).items():
            a = f"{k}{SPINS[l]}{SPINS[lp]}"
            labels.append(a)
            maps[a] = m.scaled(w)
        for uv, M in _xxz_two_time_matrices(s, pi[0]).items():
            mats[f"{k}{uv}"] = w * M
        dS.update(_thermal_delta_S(pi, prefix=str(k)))
    degenerate = _xxz_degenerate(s)
    rho = np.diag([p_up, 1 - p_up]).astype(complex)
    rho = _confirm_state(maps, rho, degenerate == "any-state-invariant")
    theta = _swap_theta(labels)
    inst = Instrument(labels, maps, rho, theta, dS)
    spec = PMPSpec(labels, mats, np.array([p_up, 1 - p_up]))
    return BuiltFamily(inst, spec, theta, dS, degenerate, params=p)


MULTI_LEVELS = ("++", "+-", "-+", "--")


def _multi_weight(level: str, betas, epsilon) -> float:
    a1, a2 = SPIN_SIGN[level[0]], SPIN_SIGN[level[1]]
    b1, b2 = betas
    return float(np.exp(-(b1 * a1 + b2 * a2) * epsilon / 2)
                 / (4 * np.cosh(b1 * epsilon / 2) * np.cosh(b2 * epsilon / 2)))


def _multi_thermal_coefficients(p) -> dict:
    eps, om, lam, mu, t = p["epsilon"], p["omega"], p["lambda"], p["mu"], p["t"]
    nu = {1: 0.5 * (om - eps + mu), -1: 0.5 * (om - eps - mu)}
    delta = {s: np.sqrt(4 * lam ** 2 + nu[s] ** 2) for s in (1, -1)}
    a = {s: np.cos(t * delta[s]) - s * 1j * nu[s] / delta[s] * np.sin(t * delta[s]) for s in (1, -1)}
    b = {s: np.sqrt(2) * lam / delta[s] * np.sin(t * delta[s]) for s in (1, -1)}
    return {"nu": nu, "delta": delta, "a": a, "b": b}


def multi_thermal_matrices(p) -> dict:
    """Closed-form PMP matrices M_a, a = (a1 a2 a3 a4), of the multi-thermal family."""
    c = _multi_thermal_coefficients(p)
    a, b, nu, t = c["a"], c["b"], c["nu"], p["t"]
    proj = {1: np.diag([1.0, 0.0]), -1: np.diag([0.0, 1.0])}
    lower = np.array([[0.0, 0.0], [1.0, 0.0]])
    raise_ = lower.T
    out = {}
    for before in MULTI_LEVELS:
        w = _multi_weight(before, p["betas"], p["epsilon"])
        for after in MULTI_LEVELS:
            s1, s2 = SPIN_SIGN[before[0]], SPIN_SIGN[before[1]]
            s3, s4 = SPIN_SIGN[after[0]], SPIN_SIGN[after[1]]
            if s1 == s2 and s3 == s4:
                M = w * (proj[s1] + abs(a[s1]) ** 2 * proj[-s1]) if s1 == s3 else np.zeros((2, 2))
            elif s1 == s2:
                M = w * b[1] ** 2 * lower if s1 == 1 else w * b[-1] ** 2 * raise_
            elif s3 == s4:
                M = w * b[-1] ** 2 * lower if s3 == -1 else w * b[1] ** 2 * raise_
            else:
                sign = 1 if s1 == s3 else -1
                M = w / 4 * (abs(1 + sign * np.exp(1j * t * nu[1]) * a[1]) ** 2 * proj[1]
                             + abs(1 + sign * np.exp(-1j * t * nu[-1]) * a[-1]) ** 2 * proj[-1])
            out[before + after] = np.asarray(M, dtype=float)
    return out


def multi_thermal_flip_rates(p) -> tuple[float, float]:
    c = _multi_thermal_coefficients(p)
    w = {lv: _multi_weight(lv, p["betas"], p["epsilon"]) for lv in MULTI_LEVELS}
    b = c["b"]
    pi_up = 2 * w["++"] * b[1] ** 2 + (w["+-"] + w["-+"]) * b[-1] ** 2
    pi_down = 2 * w["--"] * b[-1] ** 2 + (w["+-"] + w["-+"]) * b[1] ** 2
    return float(pi_up), float(pi_down)


def _build_xxz_multi_thermal(p):
    args = (p["epsilon"], p["omega"], p["lambda"], p["mu"])
    _checked(multi_thermal_block_propagator(*args, p["t"]),
             multi_thermal_block_hamiltonian(*args), p["t"])
    U = multi_thermal_propagator(*args, p["t"])
    blocks = _system_first_blocks(U, 2, 4)
    pi = [_multi_weight(lv, p["betas"], p["epsilon"]) for lv in MULTI_LEVELS]
    raw = two_time_maps(blocks, pi)
    maps = {MULTI_LEVELS[l] + MULTI_LEVELS[lp]: m for (l, lp), m in raw.items()}
    labels = [l + lp for l in MULTI_LEVELS for lp in MULTI_LEVELS]
    logs = dict(zip(MULTI_LEVELS, np.log(pi)))
    dS = {a: float(logs[a[:2]] - logs[a[2:]]) for a in labels}
    theta = {a: a[2:] + a[:2] for a in labels}
    pi_up, pi_down = multi_thermal_flip_rates(p)
    degenerate = None
    if pi_up + pi_down <= DEGENERATE_TOL:
        degenerate = "any-state-invariant"
        p_vec = np.array([0.5, 0.5])
    else:
        p_vec = np.array([pi_up, pi_down]) / (pi_up + pi_down)
    rho = _confirm_state(maps, np.diag(p_vec).astype(complex), degenerate is not None)
    inst = Instrument(labels, maps, rho, theta, dS)
    spec = PMPSpec(labels, multi_thermal_matrices(p), p_vec)
    return BuiltFamily(inst, spec, theta, dS, degenerate, params=p)


def x00_invariant_p(s_plus: float, s_minus: float, eta: float) -> float:
    return 0.5 + eta * (s_plus - s_minus) / (s_plus + s_minus)


def x00_one_time_matrices(s_plus, s_minus, eta) -> dict:
    s = {1: s_plus, -1: s_minus}
    out = {}
    for label, sg in (("+", 1), ("-", -1)):
        out[label] = np.array([
            [(0.5 - sg * eta) * (1 - s[sg]), (0.5 + sg * eta) * s[-sg]],
            [(0.5 + sg * eta) * s[sg], (0.5 - sg * eta) * (1 - s[-sg])],
        ])
    return out


def _x00_blocks(p):
    args = (p["epsilon"], p["omega"], p["lambda"])
    U = _checked(x00_propagator(*args, p["t"]), x00_hamiltonian(*args), p["t"])
    return _probe_first_blocks(U, 2, 2)


def _build_x00_one_time(p):
    blocks = _x00_blocks(p)
    eta = p["eta"]
    sp, sm = x00_s_pair(p["epsilon"], p["omega"], p["lambda"], p["t"])
    pi = [0.5 - eta, 0.5 + eta]
    maps = dict(zip(SPINS, one_time_maps(blocks, pi)))
    theta = _one_time_theta(p["theta"])
    degenerate = None
    if sp + sm <= DEGENERATE_TOL:
        degenerate = "any-state-invariant"
        p_up = 0.5
    else:
        p_up = x00_invariant_p(sp, sm, eta)
        if sp <= DEGENERATE_TOL and sm >= 1 - DEGENERATE_TOL:
            degenerate = "dirac-mixture"
        elif abs(abs(eta) - 0.5) <= DEGENERATE_TOL:
            degenerate = "keep-switch"
        elif abs(eta) <= DEGENERATE_TOL:
            degenerate = "bernoulli"
    rho = np.diag([p_up, 1 - p_up]).astype(complex)
    rho = _confirm_state(maps, rho, degenerate in ("any-state-invariant", "dirac-mixture"))
    inst = Instrument(SPINS, maps, rho, theta)
    spec = PMPSpec(SPINS, x00_one_time_matrices(sp, sm, eta), np.array([p_up, 1 - p_up]))
    return BuiltFamily(inst, spec, theta, None, degenerate, params=p)


def x00_two_time_matrices(s_plus, s_minus, pi) -> dict:
    s = {1: s_plus, -1: s_minus}
    w = {1: pi[0], -1: pi[1]}
    out = {}
    for u, su in (("+", 1), ("-", -1)):
        out[u + u] = w[su] * np.diag([1 - s[su], 1 - s[-su]])
        # M_{(-u) u} carries the weight of the first level -u
        flip = ("-" if su == 1 else "+") + u
        out[flip] = w[-su] * np.array([[0.0, s[-su]], [s[su], 0.0]])
    return out


def _x00_two_time_degenerate(sp, sm):
    if sp + sm <= DEGENERATE_TOL:
        return "any-state-invariant"
    if abs(sp - 0.5) <= DEGENERATE_TOL and abs(sm - 0.5) <= DEGENERATE_TOL:
        return "bernoulli"
    return None


def _build_x00_two_time(p):
    blocks = _x00_blocks(p)
    sp, sm = x00_s_pair(p["epsilon"], p["omega"], p["lambda"], p["t"])
    pi = _thermal_pi(p["beta"], p["epsilon"])
    raw = two_time_maps(blocks, pi)
    maps = {SPINS[l] + SPINS[lp]: m for (l, lp), m in raw.items()}
    degenerate = _x00_two_time_degenerate(sp, sm)
    p_up = 0.5 if degenerate == "any-state-invariant" else x00_invariant_p(sp, sm, p["eta"])
    rho = np.diag([p_up, 1 - p_up]).astype(complex)
    rho = _confirm_state(maps, rho, degenerate == "any-state-invariant")
    labels = _two_time_alphabet()
    theta = _swap_theta(labels)
    dS = _thermal_delta_S(pi)
    inst = Instrument(labels, maps, rho, theta, dS)
    spec = PMPSpec(labels, x00_two_time_matrices(sp, sm, pi), np.array([p_up, 1 - p_up]))
    return BuiltFamily(inst, spec, theta, dS, degenerate, params=p)


def _build_x00_random_thermal(p):
    blocks = _x00_blocks(p)
    sp, sm = x00_s_pair(p["epsilon"], p["omega"], p["lambda"], p["t"])
    maps, mats, dS, labels = {}, {}, {}, []
    eta = 0.0
    for k, (beta, w) in enumerate(zip(p["betas"], p["weights"]), start=1):
        pi = _thermal_pi(beta, p["epsilon"])
        eta += 0.5 * w * np.tanh(beta * p["epsilon"] / 2)
        for (l, lp), m in two_time_maps(blocks, pi).items():
            a = f"{k}{SPINS[l]}{SPINS[lp]}"
            labels.append(a)
            maps[a] = m.scaled(w)
        for uv, M in x00_two_time_matrices(sp, sm, pi).items():
            mats[f"{k}{uv}"] = w * M
        dS.update(_thermal_delta_S(pi, prefix=str(k)))
    degenerate = _x00_two_time_degenerate(sp, sm)
    p_up = 0.5 if degenerate == "any-state-invariant" else x00_invariant_p(sp, sm, eta)
    rho = np.diag([p_up, 1 - p_up]).astype(complex)
    rho = _confirm_state(maps, rho, degenerate == "any-state-invariant")
    theta = _swap_theta(labels)
    inst = Instrument(labels, maps, rho, theta, dS)
    spec = PMPSpec(labels, mats, np.array([p_up, 1 - p_up]))
    return BuiltFamily(inst, spec, theta, dS, degenerate, params=p)


def _build_rotational(p):
    from .rotational import rotational_instrument

    inst = rotational_instrument(p["delta"])
    return BuiltFamily(inst, None, dict(inst.theta), params=p)


_BUILDERS: dict[str, Callable[[dict], BuiltFamily]] = {
    "bernoulli": _build_bernoulli,
    "markov": _build_markov,
    "von_neumann": _build_von_neumann,
    "keep_switch": _build_keep_switch,
    "xxz_one_time": _build_xxz_one_time,
    "xxz_two_time": _build_xxz_two_time,
    "xxz_random_thermal": _build_xxz_random_thermal,
    "xxz_multi_thermal": _build_xxz_multi_thermal,
    "x00_one_time": _build_x00_one_time,
    "x00_two_time": _build_x00_two_time,
    "x00_random_thermal": _build_x00_random_thermal,
    "rotational": _build_rotational,
}


# ---------------------------------------------------------------- closed forms


def bernoulli_pressure(Q: Mapping, theta: Mapping, alpha: float) -> float:
    return float(np.log(sum(Q[a] ** (1 - alpha) * Q[theta[a]] ** alpha
                            for a in Q if Q[a] > 0)))


def bernoulli_ep(Q: Mapping, theta: Mapping) -> float:
    return float(sum(Q[a] * np.log(Q[a] / Q[theta[a]]) for a in Q if Q[a] > 0))


def bernoulli_variance(Q: Mapping, theta: Mapping) -> float:
    logs = {a: np.log(Q[a] / Q[theta[a]]) for a in Q if Q[a] > 0}
    mean = sum(Q[a] * logs[a] for a in logs)
    return float(sum(Q[a] * (logs[a] - mean) ** 2 for a in logs))


def markov_reversed(P: np.ndarray, p: np.ndarray, perm: np.ndarray):
    """Transition matrix and initial law of the reversed-and-relabeled chain."""
    p_hat = p[perm]
    P_hat = (p[perm][None, :] / p[perm][:, None]) * P[np.ix_(perm, perm)].T
    return P_hat, p_hat


def markov_pressure(P: np.ndarray, P_hat: np.ndarray, alpha: float) -> float:
    both = (P > 0) & (P_hat > 0)
    M = np.zeros_like(P)
    M[both] = P[both] ** (1 - alpha) * P_hat[both] ** alpha
    if alpha == 0:
        M = np.where(P > 0, P, 0.0)
    elif alpha == 1:
        M = np.where(P_hat > 0, P_hat, 0.0)
    return float(np.log(spectral_radius(M).radius))


def markov_ep(P: np.ndarray, P_hat: np.ndarray, p: np.ndarray) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(P > 0, P * np.log(P / P_hat), 0.0)
    return float(p @ terms.sum(axis=1))


def xxz_random_thermal_delta(alpha, betas, weights, epsilon) -> float:
    """Kernel Delta(alpha) of the XXZ random-thermal pressure (sinh form)."""
    x = np.asarray(betas) * epsilon / 2
    y = x[:, None] - x[None, :]
    c = np.cosh(x)[:, None] * np.cosh(x)[None, :]
    W = np.outer(weights, weights)
    return float(2 * np.sum(W * np.sinh(alpha * y) * np.sinh((1 - alpha) * y) / c))


def xxz_random_thermal_delta_cosh(alpha, betas, weights, epsilon) -> float:
    """The same kernel written with cosh differences over cosh sums."""
    x = np.asarray(betas) * epsilon / 2
    y = x[:, None] - x[None, :]
    xp = x[:, None] + x[None, :]
    W = np.outer(weights, weights)
    return float(2 * np.sum(W * (np.cosh(y) - np.cosh((1 - 2 * alpha) * y))
                            / (np.cosh(xp) + np.cosh(y))))


def xxz_random_thermal_pressure(alpha, s, betas, weights, epsilon) -> float:
    D = xxz_random_thermal_delta(alpha, betas, weights, epsilon)
    return float(np.log(1 + s / 2 * (np.sqrt(1 - D) - 1)))


def xxz_random_thermal_ep(s, betas, weights, epsilon) -> float:
    x = np.asarray(betas) * epsilon / 2
    y = x[:, None] - x[None, :]
    xp = x[:, None] + x[None, :]
    W = np.outer(weights, weights)
    return float(s * np.sum(W * y * np.sinh(y) / (np.cosh(xp) + np.cosh(y))))


def multi_thermal_special_delta(alpha, betas, epsilon) -> float:
    b1, b2 = betas
    y = (b1 - b2) * epsilon / 2
    return float(np.sinh(alpha * y) * np.sinh((1 - alpha) * y)
                 / (np.cosh(b1 * epsilon / 2) * np.cosh(b2 * epsilon / 2)))


def multi_thermal_special_pressure(alpha, s, betas, epsilon) -> float:
    D = multi_thermal_special_delta(alpha, betas, epsilon)
    return float(2 * np.log(1 + s * (np.sqrt(1 - D) - 1)))


def multi_thermal_special_ep(s, betas, epsilon) -> float:
    b1, b2 = betas
    y, xp = (b1 - b2) * epsilon / 2, (b1 + b2) * epsilon / 2
    return float(2 * s * y * np.sinh(y) / (np.cosh(y) + np.cosh(xp)))


def multi_thermal_general_ep(p) -> float:
    """Entropy production of the multi-thermal family for general parameters."""
    c = _multi_thermal_coefficients(p)
    a, b, nu, t = c["a"], c["b"], c["nu"], p["t"]
    b1, b2 = p["betas"]
    eps = p["epsilon"]
    y, xp = (b1 - b2) * eps / 2, (b1 + b2) * eps / 2
    csq = {s: 2 * b[s] ** 2 + abs(1 - np.exp(s * 1j * t * nu[s]) * a[s]) ** 2 for s in (1, -1)}
    num = (np.exp(-xp) * b[1] ** 2 * csq[1] + np.cosh(y) * (b[1] ** 2 * csq[-1] + b[-1] ** 2 * csq[1])
           + np.exp(xp) * b[-1] ** 2 * csq[-1])
    den = np.exp(-xp) * b[1] ** 2 + np.cosh(y) * (b[1] ** 2 + b[-1] ** 2) + np.exp(xp) * b[-1] ** 2
    A = num / den
    return float(A / 2 * y * np.sinh(y) / (np.cosh(y) + np.cosh(xp)))


def x00_two_time_delta(alpha, s_plus, s_minus, beta, epsilon) -> float:
    S = s_plus + s_minus
    return float(4 * s_plus * s_minus / S ** 2 * np.sinh(alpha * beta * epsilon)
                 * np.sinh((1 - alpha) * beta * epsilon) / np.cosh(beta * epsilon / 2) ** 2)


def x00_two_time_pressure(alpha, s_plus, s_minus, beta, epsilon) -> float:
    D = x00_two_time_delta(alpha, s_plus, s_minus, beta, epsilon)
    return float(np.log(1 + (s_plus + s_minus) / 2 * (np.sqrt(1 - D) - 1)))


def x00_two_time_ep(s_plus, s_minus, beta, epsilon) -> float:
    return float(2 * s_plus * s_minus / (s_plus + s_minus) * beta * epsilon
                 * np.tanh(beta * epsilon / 2))


def x00_random_thermal_delta(alpha, s_plus, s_minus, betas, weights, epsilon) -> float:
    S = s_plus + s_minus
    x = np.asarray(betas) * epsilon / 2
    y = x[:, None] - x[None, :]
    xp = x[:, None] + x[None, :]
    c = np.cosh(x)[:, None] * np.cosh(x)[None, :]
    W = np.outer(weights, weights)
    same = 2 * (s_plus ** 2 + s_minus ** 2) / S ** 2 * np.sinh(alpha * y) * np.sinh((1 - alpha) * y)
    cross = 4 * s_plus * s_minus / S ** 2 * np.sinh(alpha * xp) * np.sinh((1 - alpha) * xp)
    return float(np.sum(W * (same + cross) / c))


def x00_random_thermal_pressure(alpha, s_plus, s_minus, betas, weights, epsilon) -> float:
    D = x00_random_thermal_delta(alpha, s_plus, s_minus, betas, weights, epsilon)
    return float(np.log(1 + (s_plus + s_minus) / 2 * (np.sqrt(1 - D) - 1)))


def x00_random_thermal_ep(s_plus, s_minus, betas, weights, epsilon) -> float:
    S = s_plus + s_minus
    x = np.asarray(betas) * epsilon / 2
    y = x[:, None] - x[None, :]
    xp = x[:, None] + x[None, :]
    W = np.outer(weights, weights)
    den = np.cosh(y) + np.cosh(xp)
    terms = ((s_plus ** 2 + s_minus ** 2) / S * y * np.sinh(y)
             + 2 * s_plus * s_minus / S * xp * np.sinh(xp)) / den
    return float(np.sum(W * terms))


def pressure_delta_kernel(fp: FamilyParams, alpha: float) -> float:
    """Delta(alpha) of the two-time pressure formulas (must stay below 1)."""
    p = fp.params
    if fp.family == "xxz_random_thermal":
        return xxz_random_thermal_delta(alpha, p["betas"], p["weights"], p["epsilon"])
    if fp.family == "xxz_multi_thermal":
        return multi_thermal_special_delta(alpha, p["betas"], p["epsilon"])
    if fp.family == "x00_two_time":
        sp, sm = x00_s_pair(p["epsilon"], p["omega"], p["lambda"], p["t"])
        return x00_two_time_delta(alpha, sp, sm, p["beta"], p["epsilon"])
    if fp.family == "x00_random_thermal":
        sp, sm = x00_s_pair(p["epsilon"], p["omega"], p["lambda"], p["t"])
        return x00_random_thermal_delta(alpha, sp, sm, p["betas"], p["weights"], p["epsilon"])
    if fp.family == "xxz_two_time":
        return 0.0
    raise UndefinedQuantityError(f"{fp.family} has no Delta kernel")


def _second_derivative_at_zero(f: Callable[[float], float], h: float = 1e-3, levels: int = 4) -> float:
    """Richardson-extrapolated central second difference at 0."""
    table = []
    for i in range(levels):
        step = h / 2 ** i
        table.append([(f(step) - 2 * f(0.0) + f(-step)) / step ** 2])
    for j in range(1, levels):
        for i in range(j, levels):
            table[i].append(table[i][j - 1] + (table[i][j - 1] - table[i - 1][j - 1]) / (4 ** j - 1))
    return float(table[-1][-1])


def _pressure_fn(fp: FamilyParams) -> Callable[[float], float]:
    p = fp.params
    fam = fp.family
    if fam == "bernoulli":
        theta = p.get("theta") or {a: a for a in p["Q"]}
        return lambda a: bernoulli_pressure(p["Q"], theta, a)
    if fam in ("markov", "von_neumann"):
        if fam == "markov":
            P = p["P"]
            prob = p.get("p")
            alphabet = p["alphabet"]
        else:
            P = von_neumann_markov_matrix(p["unitary"], p["basis"])
            prob = None
            alphabet = [str(i) for i in range(P.shape[0])]
        spec = markov_pmp(P, prob, alphabet)
        theta = p.get("theta") or {a: a for a in alphabet}
        perm = np.array([alphabet.index(theta[a]) for a in alphabet])
        P_hat, _ = markov_reversed(spec.total, spec.p, perm)
        P_mat = spec.total
        return lambda a: markov_pressure(P_mat, P_hat, a)
    if fam == "keep_switch":
        from .keepswitch import KSParams, ks_pressure

        ks = KSParams(p["q1"], p["q2"])
        return lambda a: ks_pressure(ks, a)
    if fam == "xxz_one_time":
        Q = {"+": 0.5 - p["eta"], "-": 0.5 + p["eta"]}
        theta = _one_time_theta(p["theta"])
        return lambda a: bernoulli_pressure(Q, theta, a)
    if fam == "xxz_two_time":
        return lambda a: 0.0
    if fam == "xxz_random_thermal":
        s = xxz_s(p["epsilon"], p["omega"], p["lambda"], p["t"])
        return lambda a: xxz_random_thermal_pressure(a, s, p["betas"], p["weights"], p["epsilon"])
    if fam == "xxz_multi_thermal":
        if not (p["epsilon"] == p["omega"] and p["mu"] == 0):
            raise UndefinedQuantityError(
                "the multi-thermal pressure has a closed form only for epsilon = omega and mu = 0;"
                " use pressure_spectral on the built instrument")
        s = xxz_s(p["epsilon"], p["omega"], p["lambda"], p["t"])
        return lambda a: multi_thermal_special_pressure(a, s, p["betas"], p["epsilon"])
    if fam == "x00_one_time":
        return _x00_one_time_pressure_fn(p)
    if fam == "x00_two_time":
        sp, sm = x00_s_pair(p["epsilon"], p["omega"], p["lambda"], p["t"])
        if sp + sm <= DEGENERATE_TOL:
            return lambda a: 0.0
        return lambda a: x00_two_time_pressure(a, sp, sm, p["beta"], p["epsilon"])
    if fam == "x00_random_thermal":
        sp, sm = x00_s_pair(p["epsilon"], p["omega"], p["lambda"], p["t"])
        if sp + sm <= DEGENERATE_TOL:
            return lambda a: 0.0
        return lambda a: x00_random_thermal_pressure(a, sp, sm, p["betas"], p["weights"], p["epsilon"])
    raise UndefinedQuantityError(f"no closed-form pressure for {fam}")


def _x00_one_time_pressure_fn(p):
    sp, sm = x00_s_pair(p["epsilon"], p["omega"], p["lambda"], p["t"])
    eta = p["eta"]
    if p["theta"] == "identity":
        return lambda a: 0.0
    if sp + sm <= DEGENERATE_TOL:
        Q = {"+": 0.5 + eta, "-": 0.5 - eta}
        return lambda a: bernoulli_pressure(Q, {"+": "-", "-": "+"}, a)
    if abs(eta) <= DEGENERATE_TOL or (abs(sp - 0.5) <= DEGENERATE_TOL and abs(sm - 0.5) <= DEGENERATE_TOL):
        return lambda a: 0.0
    if abs(abs(eta) - 0.5) <= DEGENERATE_TOL and 0 < sp < 1 and 0 < sm < 1:
        from .keepswitch import KSParams, ks_pressure

        r1, r2 = (sp, sm) if eta < 0 else (sm, sp)
        ks = KSParams(1 - r1, 1 - r2)
        return lambda a: ks_pressure(ks, a)
    raise UndefinedQuantityError(
        "the X00 one-time pressure has no closed form for these parameters")


def closed_form(fp: FamilyParams | Mapping, quantity: str, alpha: float | None = None) -> float:
    """Closed-form value of ep, pressure(alpha), clt_variance or invariant_p."""
    if not isinstance(fp, FamilyParams):
        fp = FamilyParams.from_json(fp)
    p, fam = fp.params, fp.family
    if quantity == "pressure":
        if alpha is None:
            raise UndefinedQuantityError("the pressure needs an alpha")
        return float(_pressure_fn(fp)(float(alpha)))
    if quantity == "ep":
        return _closed_ep(fp)
    if quantity == "clt_variance":
        if fam == "keep_switch":
            raise UndefinedQuantityError(
                "the Keep-Switch limit law is not Gaussian; use clt_variance_z1 and clt_variance_z2")
        if fam == "bernoulli":
            theta = p.get("theta") or {a: a for a in p["Q"]}
            return bernoulli_variance(p["Q"], theta)
        return _second_derivative_at_zero(_pressure_fn(fp))
    if quantity in ("clt_variance_z1", "clt_variance_z2", "jump"):
        if fam != "keep_switch":
            raise UndefinedQuantityError(f"{quantity} is defined for keep_switch only")
        from .keepswitch import KSParams, ks_ep_and_clt

        res = ks_ep_and_clt(KSParams(p["q1"], p["q2"]))
        return float({"clt_variance_z1": res["VarZ1"], "clt_variance_z2": res["VarZ2"],
                      "jump": res["VarZ2"]}[quantity])
    if quantity == "invariant_p":
        return _closed_invariant_p(fp)
    raise UndefinedQuantityError(f"unknown quantity {quantity!r}; expected one of {QUANTITIES}")


def _closed_ep(fp: FamilyParams) -> float:
    p, fam = fp.params, fp.family
    if fam == "bernoulli":
        return bernoulli_ep(p["Q"], p.get("theta") or {a: a for a in p["Q"]})
    if fam in ("markov", "von_neumann"):
        if fam == "markov":
            spec = markov_pmp(p["P"], p.get("p"), p["alphabet"])
        else:
            P = von_neumann_markov_matrix(p["unitary"], p["basis"])
            spec = markov_pmp(P, None, [str(i) for i in range(P.shape[0])])
        alphabet = list(spec.alphabet)
        theta = p.get("theta") or {a: a for a in alphabet}
        perm = np.array([alphabet.index(theta[a]) for a in alphabet])
        P_hat, _ = markov_reversed(spec.total, spec.p, perm)
        return markov_ep(spec.total, P_hat, spec.p)
    if fam == "keep_switch":
        from .keepswitch import KSParams, ks_ep_and_clt

        return float(ks_ep_and_clt(KSParams(p["q1"], p["q2"]))["ep"])
    if fam == "xxz_one_time":
        Q = {"+": 0.5 - p["eta"], "-": 0.5 + p["eta"]}
        return bernoulli_ep(Q, _one_time_theta(p["theta"]))
    if fam == "xxz_two_time":
        return 0.0
    if fam == "xxz_random_thermal":
        s = xxz_s(p["epsilon"], p["omega"], p["lambda"], p["t"])
        return xxz_random_thermal_ep(s, p["betas"], p["weights"], p["epsilon"])
    if fam == "xxz_multi_thermal":
        if p["epsilon"] == p["omega"] and p["mu"] == 0:
            s = xxz_s(p["epsilon"], p["omega"], p["lambda"], p["t"])
            return multi_thermal_special_ep(s, p["betas"], p["epsilon"])
        return multi_thermal_general_ep(p)
    if fam == "x00_one_time":
        f = _x00_one_time_pressure_fn(p)
        if p["theta"] == "identity":
            return 0.0
        return -float(_first_derivative_at_zero(f))
    if fam == "x00_two_time":
        sp, sm = x00_s_pair(p["epsilon"], p["omega"], p["lambda"], p["t"])
        return x00_two_time_ep(sp, sm, p["beta"], p["epsilon"]) if sp + sm > 0 else 0.0
    if fam == "x00_random_thermal":
        sp, sm = x00_s_pair(p["epsilon"], p["omega"], p["lambda"], p["t"])
        if sp + sm <= 0:
            return 0.0
        return x00_random_thermal_ep(sp, sm, p["betas"], p["weights"], p["epsilon"])
    raise UndefinedQuantityError(f"no closed-form entropy production for {fam}")


def _first_derivative_at_zero(f, h: float = 1e-3, levels: int = 4) -> float:
    table = []
    for i in range(levels):
        step = h / 2 ** i
        table.append([(f(step) - f(-step)) / (2 * step)])
    for j in range(1, levels):
        for i in range(j, levels):
            table[i].append(table[i][j - 1] + (table[i][j - 1] - table[i - 1][j - 1]) / (4 ** j - 1))
    return float(table[-1][-1])


def _closed_invariant_p(fp: FamilyParams) -> float:
    p, fam = fp.params, fp.family
    if fam == "keep_switch":
        r1, r2 = 1 - p["q1"], 1 - p["q2"]
        return r2 / (r1 + r2)
    if fam in ("xxz_one_time", "xxz_two_time"):
        return 0.5 - p["eta"]
    if fam == "xxz_random_thermal":
        return float(sum(w * _thermal_pi(b, p["epsilon"])[0] for b, w in zip(p["betas"], p["weights"])))
    if fam == "xxz_multi_thermal":
        up, down = multi_thermal_flip_rates(p)
        if up + down <= DEGENERATE_TOL:
            raise UndefinedQuantityError("every state is invariant in this degenerate case")
        return up / (up + down)
    if fam in ("x00_one_time", "x00_two_time", "x00_random_thermal"):
        sp, sm = x00_s_pair(p["epsilon"], p["omega"], p["lambda"], p["t"])
        if sp + sm <= DEGENERATE_TOL:
            raise UndefinedQuantityError("every state is invariant when s_plus = s_minus = 0")
        if fam == "x00_random_thermal":
            eta = 0.5 * sum(w * np.tanh(b * p["epsilon"] / 2) for b, w in zip(p["betas"], p["weights"]))
        else:
            eta = p["eta"]
        return x00_invariant_p(sp, sm, eta)
    raise UndefinedQuantityError(f"no closed-form invariant weight for {fam}")
