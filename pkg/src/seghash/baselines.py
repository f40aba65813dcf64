"""Comparison engines: linear Hamming scan, random-hyperplane LSH, dense re-rank."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .index import DEFAULT_MAX_CANDIDATES, RecallResult, SegmentedIndex
from .ternary import SegmentConfig, sign


def pack_bits(bits) -> np.ndarray:
    """Pack (n, B) or (B,) bits into uint64 words, bit j in word j // 64 at position j % 64.

    A bit counts as set when its value is positive, so both {0, 1} and
    {-1, +1} encodings work. Padding bits are zero.
    """
    bits = np.asarray(bits)
    single = bits.ndim == 1
    if single:
        bits = bits[None, :]
    n, B = bits.shape
    words = (B + 63) // 64
    padded = np.zeros((n, words * 64), dtype=np.uint64)
    padded[:, :B] = bits > 0
    shifts = np.arange(64, dtype=np.uint64)
    packed = (padded.reshape(n, words, 64) << shifts).sum(axis=2, dtype=np.uint64)
    return packed[0] if single else packed


def hamming_distances(query_words, corpus_words) -> np.ndarray:
    """XOR + popcount distance from one packed query to every packed corpus row."""
    query_words = np.asarray(query_words, dtype=np.uint64)
    corpus_words = np.asarray(corpus_words, dtype=np.uint64)
    if corpus_words.ndim != 2 or corpus_words.shape[1] != query_words.shape[-1]:
        raise ValueError(
            f"query has {query_words.shape[-1]} words, corpus rows have {corpus_words.shape[-1]}"
        )
    return np.bitwise_count(corpus_words ^ query_words).sum(axis=1, dtype=np.int64)


def hamming_scan(query_words, corpus_words, top_n: int | None = DEFAULT_MAX_CANDIDATES, partial: bool = False):
    """Rank the whole corpus by Hamming distance to the query.

    The default path fully sorts every distance (ascending, ties by id), which
    is the cost profile of a linear-scan recall. `partial=True` selects the top
    `top_n` first and sorts only those; same output, not used for timing.

    Returns (ids, distances).
    """
    dist = hamming_distances(query_words, corpus_words)
    n = dist.size
    if top_n is None or top_n >= n:
        top_n = n
    if partial and top_n < n:
        # distances are small integers, so (distance, id) packs into one sortable key
        key = dist * n + np.arange(n)
        head = np.argpartition(key, top_n - 1)[:top_n]
        order = head[np.argsort(key[head])]
    else:
        order = np.argsort(dist, kind="stable")[:top_n]
    return order, dist[order]


@dataclass
class LshConfig:
    num_tables: int
    bits_per_table: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.num_tables <= 0 or self.bits_per_table <= 0:
            raise ValueError("num_tables and bits_per_table must be positive")
        if self.bits_per_table > 32:
            raise ValueError("bits_per_table above 32 does not fit a u32 key")


class LshIndex:
    """Multi-table LSH with one shared set of Gaussian hyperplanes.

    Table t uses hyperplanes [t * b, (t + 1) * b); key bit j is 1 when the
    projection is positive. Lookup and ranking reuse SegmentedIndex with no
    relaxed bits.
    """

    def __init__(self, cfg: LshConfig, hyperplanes: np.ndarray | None = None, dim: int | None = None):
        self.cfg = cfg
        n_planes = cfg.num_tables * cfg.bits_per_table
        if hyperplanes is None:
            if dim is None:
                raise ValueError("need either hyperplanes or an input dimension")
            hyperplanes = np.random.default_rng(cfg.seed).standard_normal((n_planes, dim))
        hyperplanes = np.asarray(hyperplanes, dtype=np.float64)
        if hyperplanes.shape[0] != n_planes:
            raise ValueError(f"expected {n_planes} hyperplanes, got {hyperplanes.shape[0]}")
        self.hyperplanes = hyperplanes
        self.seg_cfg = SegmentConfig(n_planes, cfg.bits_per_table, 0)
        self.index: SegmentedIndex | None = None

    def codes(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.hyperplanes.shape[1]:
            raise ValueError(f"expected embeddings of width {self.hyperplanes.shape[1]}, got {X.shape[-1]}")
        bits = sign(X @ self.hyperplanes.T)
        return bits.reshape(*bits.shape[:-1], self.cfg.num_tables, self.cfg.bits_per_table)

    def build(self, X) -> "LshIndex":
        self.index = SegmentedIndex.build(self.codes(np.atleast_2d(X)), self.seg_cfg)
        return self

    def query(self, x, max_n: int | None = DEFAULT_MAX_CANDIDATES) -> RecallResult:
        if self.index is None:
            raise RuntimeError("LshIndex.build must be called before query")
        return self.index.recall(self.codes(x), max_n)


def lsh_build(embeddings, cfg: LshConfig) -> LshIndex:
    embeddings = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    return LshIndex(cfg, dim=embeddings.shape[1]).build(embeddings)


def lsh_query(x, lsh: LshIndex, max_n: int | None = DEFAULT_MAX_CANDIDATES) -> RecallResult:
    return lsh.query(x, max_n)


def similarity(query, X, metric: str = "cosine") -> np.ndarray:
    query = np.asarray(query, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    dots = X @ query
    if metric == "dot":
        return dots
    if metric != "cosine":
        raise ValueError(f"unknown metric {metric!r}")
    norms = np.linalg.norm(X, axis=-1) * np.linalg.norm(query)
    return np.divide(dots, norms, out=np.zeros_like(dots), where=norms > 0)


def dense_rerank(query_embedding, candidate_ids, code_embeddings, metric: str = "cosine") -> np.ndarray:
    """Reorder candidates by similarity to the query, best first, ties by lower id."""
    ids = np.asarray(candidate_ids, dtype=np.int64)
    if ids.size == 0:
        return ids
    n = len(code_embeddings)
    bad = ids[(ids < 0) | (ids >= n)]
    if bad.size:
        raise KeyError(f"candidate id {int(bad[0])} not in the code store of {n} items")
    sims = similarity(query_embedding, np.asarray(code_embeddings)[ids], metric)
    return ids[np.lexsort((ids, -sims))]
