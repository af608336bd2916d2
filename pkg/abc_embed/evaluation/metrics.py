"""Recall@K with deterministic tie-breaking."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from abc_embed.core.errors import ConfigError

DEFAULT_KS = (1, 5, 10)


def recall_key(k: int) -> str:
    return f"R@{k}"


def gold_ranks(
    scores: np.ndarray,
    gold: Sequence[int],
    candidate_keys: Sequence[str] | None = None,
) -> np.ndarray:
    """0-based rank of each query's gold candidate.

    Candidates with a higher score rank first; equal scores are ordered by
    ascending candidate key (index order when no keys are given).

    Args:
        scores: n_queries × n_candidates similarities
        gold: Gold candidate index per query
        candidate_keys: Tie-break key per candidate

    Returns:
        Integer rank per query
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ConfigError(f"scores must be 2-D, got shape {scores.shape}", field_path="scores")
    n, m = scores.shape
    gold = np.asarray(gold, dtype=np.int64)
    if gold.shape != (n,) or np.any(gold < 0) or np.any(gold >= m):
        raise ConfigError("every query needs one valid gold candidate index", field_path="gold")

    if candidate_keys is None:
        order = np.arange(m)
    else:
        if len(candidate_keys) != m:
            raise ConfigError("one tie-break key per candidate", field_path="candidate_keys")
        order = np.empty(m, dtype=np.int64)
        order[np.argsort(np.asarray(candidate_keys, dtype=object), kind="stable")] = np.arange(m)

    gold_scores = scores[np.arange(n), gold][:, None]
    better = scores > gold_scores
    tied_before = (scores == gold_scores) & (order[None, :] < order[gold][:, None])
    return (better | tied_before).sum(axis=1)


def recall_at_k(
    scores: np.ndarray,
    gold: Sequence[int],
    ks: Sequence[int] = DEFAULT_KS,
    candidate_keys: Sequence[str] | None = None,
) -> dict[str, float]:
    """Fraction of queries whose gold candidate ranks in the top k.

    Raises:
        ConfigError: If some k exceeds the number of candidates
    """
    m = np.asarray(scores).shape[-1]
    for k in ks:
        if k < 1 or k > m:
            raise ConfigError(f"k={k} is outside 1..{m} candidates", field_path="ks")
    ranks = gold_ranks(scores, gold, candidate_keys)
    return {recall_key(k): float(np.mean(ranks < k)) for k in sorted(ks)}
