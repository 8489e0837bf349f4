"""Dense linear algebra and convex-analysis primitives shared by all modules."""

from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg
import scipy.optimize
from scipy.sparse.csgraph import connected_components

EIGEN_TOL = 1e-12
CLOSED_FORM_TOL = 1e-10


class NonConvergenceError(RuntimeError):
    """Power iteration did not settle; the spectrum is degenerate or peripheral."""


class ReducibleMatrixError(ValueError):
    """A stochastic matrix has more than one stationary vector."""


class SpectralResult(NamedTuple):
    radius: float
    right_vec: np.ndarray
    left_vec: np.ndarray


class LegendreResult(NamedTuple):
    value: float
    argmax: float
    boundary: bool


def _unit_l1(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    # fix the phase so that the largest entry is real and positive
    k = int(np.argmax(np.abs(v)))
    if np.iscomplexobj(v) and v[k] != 0:
        v = v * (abs(v[k]) / v[k])
    norm = np.sum(np.abs(v))
    return v / norm if norm > 0 else v


def _check_square(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    return M


def power_iteration(M, start, max_iter: int = 20000, tol: float = 1e-14):
    """Dominant eigenpair of M from a cone vector by normalized power iteration.

    Raises NonConvergenceError when the residual does not drop below ``tol``.
    """
    M = _check_square(M)
    v = np.asarray(start, dtype=np.result_type(M, np.float64)).ravel()
    if v.shape[0] != M.shape[0]:
        raise ValueError("start vector does not match the matrix dimension")
    v = v / np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = M @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0, v
        lam = np.vdot(v, w)
        if np.linalg.norm(w - lam * v) <= tol * max(abs(lam), 1e-300):
            return float(abs(lam)), w / nw
        v = w / nw
    raise NonConvergenceError("power iteration did not converge")


def _dense_dominant(M: np.ndarray):
    vals, left, right = scipy.linalg.eig(M, left=True, right=True)
    mods = np.abs(vals)
    top = mods.max()
    # among peripheral eigenvalues prefer the real nonnegative one
    candidates = np.flatnonzero(mods >= top * (1 - 1e-12))
    k = candidates[np.argmin(np.abs(vals[candidates] - top))]
    return float(top), right[:, k], left[:, k]


def spectral_radius(M, cone_start=None, max_iter: int = 20000) -> SpectralResult:
    """Spectral radius with dominant right and left eigenvectors of unit 1-norm.

    With ``cone_start`` (a nonzero vector in an invariant cone, e.g. a vectorized
    positive semidefinite matrix or the all-ones vector) power iteration is used;
    a dense eigensolve takes over when it stalls.
    """
    M = _check_square(M)
    if cone_start is not None:
        start = np.asarray(cone_start).ravel()
        if start.shape[0] != M.shape[0]:
            raise ValueError("cone_start does not match the matrix dimension")
        try:
            r, right = power_iteration(M, start, max_iter=max_iter)
            _, left = power_iteration(M.conj().T, start, max_iter=max_iter)
            return SpectralResult(r, _unit_l1(right), _unit_l1(left))
        except NonConvergenceError:
            pass
    r, right, left = _dense_dominant(M)
    return SpectralResult(r, _unit_l1(right), _unit_l1(left))


def is_hermitian(H, tol: float = 1e-12) -> bool:
    H = np.asarray(H)
    scale = max(1.0, float(np.max(np.abs(H)))) if H.size else 1.0
    return H.ndim == 2 and H.shape[0] == H.shape[1] and bool(
        np.max(np.abs(H - H.conj().T), initial=0.0) <= tol * scale
    )


def matrix_exponential(H, t: float) -> np.ndarray:
    """The propagator exp(-i t H) of a Hermitian H (scaling and squaring Pade)."""
    H = _check_square(np.asarray(H, dtype=complex))
    if not is_hermitian(H):
        raise ValueError("matrix_exponential expects a Hermitian generator")
    return scipy.linalg.expm(-1j * t * H)


def is_irreducible_stochastic(M) -> bool:
    M = _check_square(np.asarray(M))
    if M.shape[0] == 1:
        return True
    n, _ = connected_components(np.abs(M) > 0, directed=True, connection="strong")
    return n == 1


def stationary_vector(M) -> np.ndarray:
    """Unique probability row vector p with p M = p for an irreducible stochastic M."""
    M = _check_square(np.asarray(M, dtype=float))
    if np.any(M < -EIGEN_TOL):
        raise ValueError("stationary_vector expects a nonnegative matrix")
    if np.max(np.abs(M.sum(axis=1) - 1.0)) > 1e-10:
        raise ValueError("stationary_vector expects a right-stochastic matrix")
    if not is_irreducible_stochastic(M):
        raise ReducibleMatrixError("matrix is reducible; stationary vector is not unique")
    d = M.shape[0]
    A = np.vstack([(M - np.eye(d)).T, np.ones((1, d))])
    b = np.zeros(d + 1)
    b[-1] = 1.0
    p, *_ = np.linalg.lstsq(A, b, rcond=None)
    p = np.clip(p, 0.0, None)
    p /= p.sum()
    # one refinement sweep keeps the residual at machine level
    for _ in range(3):
        p = p @ M
        p /= p.sum()
    return p


def legendre_transform(f, s: float, lo: float | None = None, hi: float | None = None,
                       xatol: float = 1e-11) -> LegendreResult:
    """sup over alpha of (alpha*s - f(alpha)).

    ``f`` is either a callable convex function (maximized on [lo, hi] by bounded
    Brent search) or a pair ``(alphas, values)`` of samples, in which case the
    supremum over the sampled points is returned. ``boundary`` is set when the
    maximizer sits at an end of the interval, meaning the true supremum may be
    larger (possibly infinite).
    """
    if callable(f):
        if lo is None or hi is None:
            raise ValueError("a callable f needs the interval bounds lo and hi")
        g: Callable[[float], float] = lambda a: f(a) - a * s
        res = scipy.optimize.minimize_scalar(g, bounds=(lo, hi), method="bounded",
                                             options={"xatol": xatol})
        best_a, best = float(res.x), -float(res.fun)
        for a in (lo, hi):
            val = a * s - f(a)
            if val > best:
                best_a, best = a, val
        width = hi - lo
        boundary = min(abs(best_a - lo), abs(best_a - hi)) <= 1e-6 * width
        if boundary:
            # a flat top touching the edge (affine f) is not a boundary sup
            interior = 0.5 * (lo + hi)
            if abs((interior * s - f(interior)) - best) <= 1e-12 * max(1.0, abs(best)):
                boundary = False
        return LegendreResult(best, best_a, bool(boundary))
    alphas, values = (np.asarray(x, dtype=float) for x in f)
    vals = alphas * s - values
    k = int(np.argmax(vals))
    boundary = k in (0, len(alphas) - 1) and not np.allclose(vals, vals[k], atol=1e-12)
    return LegendreResult(float(vals[k]), float(alphas[k]), bool(boundary))


def logsumexp_weighted(log_terms: np.ndarray) -> float:
    """log of the sum of exp(log_terms), tolerant of -inf and +inf entries."""
    log_terms = np.asarray(log_terms, dtype=float)
    if log_terms.size == 0:
        return -np.inf
    if np.any(np.isposinf(log_terms)):
        return np.inf
    m = np.max(log_terms)
    if not np.isfinite(m):
        return -np.inf
    return float(m + np.log(np.sum(np.exp(log_terms - m))))
