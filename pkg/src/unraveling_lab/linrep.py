"""Linear representations of word measures and batched enumeration over Omega_T.

A word measure is P(w) = init @ A[w1] @ ... @ A[wT] @ final.  PMP measures use
(p, M_a, ones); instruments use (vec rho, Schrodinger superoperators, trace).
Each representation carries boolean zero patterns so that support decisions are
made symbolically rather than by floating-point underflow.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

PATTERN_REL_TOL = 1e-14
DEFAULT_BUDGET = 10_000_000
DEFAULT_CHUNK = 1 << 19


class BudgetExceededError(RuntimeError):
    """Enumeration would visit more nodes than the configured budget."""


class AlphabetError(KeyError):
    """A symbol outside the alphabet was supplied."""


def nonzero_pattern(A: np.ndarray, scale: float | None = None) -> np.ndarray:
    A = np.asarray(A)
    if scale is None:
        scale = float(np.max(np.abs(A), initial=0.0))
    return np.abs(A) > PATTERN_REL_TOL * scale if scale > 0 else np.zeros(A.shape, bool)


@dataclass(frozen=True)
class LinearRep:
    """Row-vector representation ``init @ mats[a1] @ ... @ final``."""

    alphabet: tuple
    init: np.ndarray
    mats: np.ndarray  # shape (k, n, n)
    final: np.ndarray
    init_pattern: np.ndarray
    mat_patterns: np.ndarray  # shape (k, n, n), bool
    final_pattern: np.ndarray
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "index", {a: i for i, a in enumerate(self.alphabet)})

    @property
    def size(self) -> int:
        return self.init.shape[0]

    def encode(self, word: Sequence) -> np.ndarray:
        try:
            return np.fromiter((self.index[a] for a in word), dtype=np.int64)
        except KeyError as exc:
            raise AlphabetError(f"symbol {exc.args[0]!r} is not in the alphabet") from None

    def in_support(self, word: Sequence) -> bool:
        pat = self.init_pattern.astype(np.int64)
        for i in self.encode(word):
            pat = (pat @ self.mat_patterns[i].astype(np.int64) > 0).astype(np.int64)
            if not pat.any():
                return False
        return bool((pat.astype(bool) & self.final_pattern).any())

    def log_prob(self, word: Sequence) -> float:
        """Log-probability with per-step renormalization (safe for long words)."""
        idx = self.encode(word)
        if not self.in_support(word):
            return -np.inf
        v = self.init.astype(np.result_type(self.init, self.mats))
        log_scale = 0.0
        for i in idx:
            v = v @ self.mats[i]
            n = np.sum(np.abs(v))
            if n == 0.0:
                return -np.inf
            v = v / n
            log_scale += np.log(n)
        val = float(np.real(v @ self.final))
        return log_scale + np.log(val) if val > 0 else -np.inf

    def total_mass(self, T: int) -> float:
        """Sum over all words of length T, through the summed transfer matrix."""
        total = self.mats.sum(axis=0)
        v = self.init.astype(np.result_type(self.init, total))
        for _ in range(T):
            v = v @ total
        return float(np.real(v @ self.final))


def from_matrices(alphabet, init, mats, final) -> LinearRep:
    mats = np.asarray([np.asarray(m) for m in mats])
    scale = float(np.max(np.abs(mats), initial=0.0))
    pats = np.array([nonzero_pattern(m, scale) for m in mats])
    init = np.asarray(init)
    final = np.asarray(final)
    return LinearRep(tuple(alphabet), init, mats, final,
                     nonzero_pattern(init), pats, nonzero_pattern(final))


@dataclass
class _Batch:
    words: np.ndarray  # (N, depth) small ints
    vecs: list  # per measure (N, n)
    logs: list  # per measure (N,)
    pattern: np.ndarray  # support pattern of the leading measure (N, n) bool


def _step(batch: _Batch, reps: Sequence[LinearRep], prune: bool) -> _Batch:
    lead = reps[0]
    k = len(lead.alphabet)
    N = batch.words.shape[0]
    pats_lead = lead.mat_patterns.astype(np.int32)
    new_pattern = (np.einsum("ni,aij->anj", batch.pattern.astype(np.int32), pats_lead) > 0)
    new_pattern = new_pattern.reshape(k * N, -1)
    keep = new_pattern.any(axis=1) if prune else np.ones(k * N, dtype=bool)
    sym = np.repeat(np.arange(k, dtype=batch.words.dtype), N)
    words = np.concatenate([np.tile(batch.words, (k, 1)), sym[:, None]], axis=1)[keep]
    vecs, logs = [], []
    for rep, v, lg in zip(reps, batch.vecs, batch.logs):
        nv = np.einsum("ni,aij->anj", v, rep.mats).reshape(k * N, -1)[keep]
        norms = np.sum(np.abs(nv), axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            safe = np.where(norms > 0, norms, 1.0)
            nv = nv / safe[:, None]
            nl = np.tile(lg, k)[keep] + np.where(norms > 0, np.log(safe), -np.inf)
        vecs.append(nv)
        logs.append(nl)
    return _Batch(words, vecs, logs, new_pattern[keep])


def enumerate_words(reps: Sequence[LinearRep], T: int, budget: int = DEFAULT_BUDGET,
                    chunk: int = DEFAULT_CHUNK, prune: bool = True
                    ) -> Iterator[tuple[np.ndarray, list]]:
    """Yield batches ``(words, [log P_1, log P_2, ...])`` covering Omega_T.

    Words are pruned to the support of the first measure (unless ``prune`` is
    False).  Order is deterministic.  Raises BudgetExceededError when the number
    of visited nodes would exceed ``budget``.
    """
    lead = reps[0]
    k = len(lead.alphabet)
    for rep in reps[1:]:
        if tuple(rep.alphabet) != tuple(lead.alphabet):
            raise ValueError("all representations must share one alphabet")
    dtype = np.int8 if k < 127 else np.int32
    root = _Batch(np.zeros((1, 0), dtype=dtype),
                  [r.init[None, :].astype(np.result_type(r.init, r.mats)) for r in reps],
                  [np.zeros(1) for _ in reps],
                  lead.init_pattern[None, :].copy())
    visited = [0]

    def finish(batch: _Batch):
        out = []
        for rep, v, lg in zip(reps, batch.vecs, batch.logs):
            val = np.real(v @ rep.final)
            with np.errstate(divide="ignore", invalid="ignore"):
                out.append(np.where(val > 0, lg + np.log(np.where(val > 0, val, 1.0)), -np.inf))
        if prune:
            alive = (batch.pattern & lead.final_pattern[None, :]).any(axis=1)
            if not alive.all():
                return batch.words[alive], [o[alive] for o in out]
        return batch.words, out

    def walk(batch: _Batch, depth: int):
        while depth < T:
            n = batch.words.shape[0]
            if n * k > chunk and n > 1:
                half = n // 2
                for part in (slice(0, half), slice(half, n)):
                    yield from walk(_Batch(batch.words[part], [v[part] for v in batch.vecs],
                                           [lg[part] for lg in batch.logs],
                                           batch.pattern[part]), depth)
                return
            visited[0] += n * k
            if visited[0] > budget:
                raise BudgetExceededError(
                    f"enumeration of length-{T} words exceeds the budget of {budget} nodes")
            batch = _step(batch, reps, prune)
            depth += 1
        yield finish(batch)

    yield from walk(root, 0)


def all_log_probs(reps: Sequence[LinearRep], T: int, budget: int = DEFAULT_BUDGET,
                  prune: bool = True):
    """Concatenate the output of enumerate_words (for moderate T)."""
    words, logs = [], [[] for _ in reps]
    for w, lg in enumerate_words(reps, T, budget=budget, prune=prune):
        words.append(w)
        for acc, x in zip(logs, lg):
            acc.append(x)
    if not words:
        return np.zeros((0, T), dtype=np.int8), [np.zeros(0) for _ in reps]
    return np.concatenate(words), [np.concatenate(x) for x in logs]
