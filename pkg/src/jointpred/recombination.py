"""Top-K joint modes from marginal mode probabilities.

A joint mode picks one marginal mode per agent; its score is the product of
the picked marginal probabilities. Scores are accumulated as log
probabilities, agent by agent in index order, by both the beam search and
the exhaustive oracle so that the two produce bit-identical values.

Ordering is by descending score, ties broken by the lexicographically
smallest index tuple. Under that order a beam of width ``W >= K`` is exact:
if a full combination is in the top K, every prefix ranked above its own
prefix extends (with the same suffix) to a combination ranked above it, so
fewer than K prefixes outrank it and it survives the beam.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BRUTEFORCE_CAP = 10**6


@dataclass(frozen=True)
class JointMode:
    indices: tuple[int, ...]
    log_score: float

    @property
    def score(self) -> float:
        return float(np.exp(self.log_score))


def _log_probs(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2 or s.shape[1] == 0:
        raise ValueError(f"marginal scores must be [N_a, K] with K >= 1, got {s.shape}")
    if not np.all(np.isfinite(s)) or np.any(s < 0):
        raise ValueError("marginal scores must be finite and non-negative")
    rows = s.sum(axis=1, keepdims=True)
    if np.any(rows <= 0):
        raise ValueError("every agent needs a positive total score")
    # renormalise rows that do not already sum to one
    s = np.where(np.abs(rows - 1.0) > 1e-12, s / rows, s)
    with np.errstate(divide="ignore"):
        return np.log(s)


def _order(idx: np.ndarray, logp: np.ndarray) -> np.ndarray:
    keys = [idx[:, c] for c in range(idx.shape[1] - 1, -1, -1)] + [-logp]
    return np.lexsort(keys)


def recombine_beam(scores, k: int, beam_width: int | None = None) -> list[JointMode]:
    """Top-``k`` joint modes by beam search over agents (exact for ``beam_width >= k``)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    logp = _log_probs(scores)
    n_agents, n_modes = logp.shape
    width = k if beam_width is None else beam_width
    if width < k:
        raise ValueError(f"beam width {width} < k={k}")
    idx = np.zeros((1, 0), dtype=np.int64)
    acc = np.zeros(1)
    for i in range(n_agents):
        P = len(acc)
        cand_idx = np.concatenate([np.repeat(idx, n_modes, axis=0), np.tile(np.arange(n_modes), P)[:, None]], axis=1)
        cand_acc = np.repeat(acc, n_modes) + np.tile(logp[i], P)
        keep = _order(cand_idx, cand_acc)[:width]
        idx, acc = cand_idx[keep], cand_acc[keep]
    return [JointMode(tuple(int(v) for v in row), float(a)) for row, a in zip(idx[:k], acc[:k])]


def recombine_bruteforce(scores, cap: int = BRUTEFORCE_CAP) -> list[JointMode]:
    """All ``K**N_a`` joint modes, sorted. Refuses when the count exceeds ``cap``."""
    logp = _log_probs(scores)
    n_agents, n_modes = logp.shape
    total = n_modes**n_agents
    if total > cap:
        raise ValueError(f"{total} joint combinations exceed the cap of {cap}; use recombine_beam")
    idx = np.indices((n_modes,) * n_agents).reshape(n_agents, -1).T
    acc = np.zeros(len(idx))
    for i in range(n_agents):
        acc = acc + logp[i, idx[:, i]]
    order = _order(idx, acc)
    return [JointMode(tuple(int(v) for v in idx[j]), float(acc[j])) for j in order]


def normalized_scores(modes: list[JointMode]) -> np.ndarray:
    """Scores of the selected modes rescaled to sum to one."""
    if not modes:
        return np.zeros(0)
    lp = np.array([m.log_score for m in modes])
    w = np.exp(lp - lp.max())
    return w / w.sum()
