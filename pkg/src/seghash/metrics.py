"""Retrieval metrics (R@k, MRR, NDCG@k) and relaxing diagnostics."""

from __future__ import annotations

import math
import warnings
from collections.abc import Iterable, Sequence

import numpy as np


def first_relevant_rank(ranking: Iterable[int], relevant) -> int | None:
    """1-based position of the first relevant id in `ranking`, or None."""
    relevant = {relevant} if isinstance(relevant, (int, np.integer)) else set(relevant)
    for pos, item in enumerate(ranking, start=1):
        if int(item) in relevant:
            return pos
    return None


def _check(franks: Sequence) -> list:
    franks = list(franks)
    if not franks:
        raise ValueError("metrics need at least one query")
    for f in franks:
        if f is not None and f < 1:
            raise ValueError(f"ranks are 1-based, got {f}")
    return franks


def recall_at_k(franks: Sequence[int | None], k: int) -> float:
    if k < 1:
        raise ValueError("k must be at least 1")
    franks = _check(franks)
    return sum(1 for f in franks if f is not None and f <= k) / len(franks)


def mrr(franks: Sequence[int | None]) -> float:
    franks = _check(franks)
    return sum(1.0 / f for f in franks if f is not None) / len(franks)


def dcg(relevance: Sequence[float], k: int) -> float:
    return sum(rel / math.log2(i + 1) for i, rel in enumerate(relevance[:k], start=1))


def ndcg_at_k(rankings: Sequence[Sequence[int]], relevant_sets: Sequence, k: int) -> float:
    """Mean NDCG@k with binary relevance and base-2 discounting.

    A query with no relevant item at all scores 0 and triggers a warning.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if len(rankings) != len(relevant_sets):
        raise ValueError("one relevant set per ranking is required")
    if not rankings:
        raise ValueError("metrics need at least one query")
    scores = []
    flagged = []
    for q, (ranking, rel) in enumerate(zip(rankings, relevant_sets)):
        rel = {rel} if isinstance(rel, (int, np.integer)) else set(rel)
        if not rel:
            flagged.append(q)
            scores.append(0.0)
            continue
        gains = [1.0 if int(item) in rel else 0.0 for item in list(ranking)[:k]]
        ideal = dcg([1.0] * len(rel), k)
        scores.append(dcg(gains, k) / ideal)
    if flagged:
        warnings.warn(f"{len(flagged)} queries have no relevant items (first: {flagged[0]})", stacklevel=2)
    return float(np.mean(scores))


def repair_ratio(code_bits, query_bits, code_relaxed, query_relaxed, side: str | None = None) -> float:
    """Share of single-side relaxed bits that were misaligned in the initial codes.

    code_bits / query_bits are the pre-alignment binary codes of matched pairs
    (n, B); *_relaxed are boolean masks of the positions each head relaxed.
    Positions relaxed by both heads are excluded. `side` restricts the count
    to bits relaxed by only the "code" or only the "query" head. Returns NaN
    when no bit qualifies.
    """
    code_bits = np.asarray(code_bits)
    query_bits = np.asarray(query_bits)
    code_relaxed = np.asarray(code_relaxed, dtype=bool)
    query_relaxed = np.asarray(query_relaxed, dtype=bool)
    if not (code_bits.shape == query_bits.shape == code_relaxed.shape == query_relaxed.shape):
        raise ValueError("all inputs must share one shape")
    if side is None:
        counted = code_relaxed ^ query_relaxed
    elif side == "code":
        counted = code_relaxed & ~query_relaxed
    elif side == "query":
        counted = query_relaxed & ~code_relaxed
    else:
        raise ValueError(f"side must be None, 'code' or 'query', got {side!r}")
    total = int(counted.sum())
    if total == 0:
        return float("nan")
    misaligned = (code_bits > 0) != (query_bits > 0)
    return float((misaligned & counted).sum() / total)


def dual_relaxed_count(code_ternary, query_ternary) -> float:
    """Mean number of positions per segment that both heads relaxed."""
    c = np.asarray(code_ternary)
    q = np.asarray(query_ternary)
    if c.shape != q.shape:
        raise ValueError(f"shapes differ: {c.shape} vs {q.shape}")
    both = ((c == 0) & (q == 0)).sum(axis=-1)
    return float(both.mean()) if both.size else 0.0


def faithfulness(table_sets: Sequence, hamming_sets: Sequence) -> float:
    """Mean over queries of |A & B| / |B|, A from table recall, B from Hamming recall."""
    if len(table_sets) != len(hamming_sets):
        raise ValueError("one table recall set per Hamming recall set is required")
    if not hamming_sets:
        raise ValueError("metrics need at least one query")
    ratios = []
    for a, b in zip(table_sets, hamming_sets):
        b = {int(x) for x in b}
        if not b:
            raise ValueError("Hamming recall set is empty")
        ratios.append(len(b & {int(x) for x in a}) / len(b))
    return float(np.mean(ratios))
