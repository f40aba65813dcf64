"""Segmented lookup index: one hash table per code segment.

Each table maps a k-bit key to the sorted ids of codes whose ternary segment
expands to that key. A query is answered by looking up the expansions of its
own segments, counting in how many tables each code was hit, and bucket
sorting by that count.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .ternary import SegmentConfig, expand, expand_keys

INDEX_MAGIC = b"SDHI"
INDEX_VERSION = 1
DEFAULT_MAX_CANDIDATES = 300
_DENSE_KEY_BITS = 20


@dataclass
class RecallResult:
    ids: np.ndarray
    hits: np.ndarray
    truncated_to: int | None = DEFAULT_MAX_CANDIDATES

    def __len__(self):
        return len(self.ids)

    @property
    def candidates(self) -> list[tuple[int, int]]:
        return list(zip(self.ids.tolist(), self.hits.tolist()))

    def __eq__(self, other):
        return (
            isinstance(other, RecallResult)
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.hits, other.hits)
            and self.truncated_to == other.truncated_to
        )


def bucket_rank(ids: np.ndarray, counts: np.ndarray, n_buckets: int, max_n: int | None) -> RecallResult:
    """Order candidates by hit count (high first), then id, via one pass per bucket.

    `ids` must already be ascending so each bucket keeps id order.
    """
    out_ids, out_hits = [], []
    taken = 0
    for b in range(n_buckets, 0, -1):
        if max_n is not None and taken >= max_n:
            break
        sel = ids[counts == b]
        if max_n is not None:
            sel = sel[: max_n - taken]
        if sel.size:
            out_ids.append(sel)
            out_hits.append(np.full(sel.size, b, dtype=np.int64))
            taken += sel.size
    if not out_ids:
        return RecallResult(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64), max_n)
    return RecallResult(np.concatenate(out_ids).astype(np.int64), np.concatenate(out_hits), max_n)


class _Table:
    __slots__ = ("keys", "offsets", "postings", "_starts")

    def __init__(self, keys: np.ndarray, offsets: np.ndarray, postings: np.ndarray):
        self.keys = keys
        self.offsets = offsets
        self.postings = postings
        self._starts = None

    def dense(self, key_bits: int):
        # start offset for every possible key; key -> postings[starts[key]:starts[key+1]]
        if self._starts is None:
            counts = np.zeros(1 << key_bits, dtype=np.int64)
            counts[self.keys.astype(np.int64)] = np.diff(self.offsets)
            self._starts = np.concatenate([[0], np.cumsum(counts)])
        return self._starts

    def lookup(self, key: int, key_bits: int) -> np.ndarray:
        if key_bits <= _DENSE_KEY_BITS:
            starts = self.dense(key_bits)
            return self.postings[starts[key] : starts[key + 1]]
        pos = np.searchsorted(self.keys, key)
        if pos < len(self.keys) and self.keys[pos] == key:
            return self.postings[self.offsets[pos] : self.offsets[pos + 1]]
        return self.postings[:0]

    def n_postings(self) -> int:
        return int(self.postings.size)

    def posting_dict(self) -> dict[int, np.ndarray]:
        return {int(k): self.postings[a:b] for k, a, b in zip(self.keys, self.offsets[:-1], self.offsets[1:])}


class SegmentedIndex:
    """Immutable collection of S lookup tables built from ternary codes."""

    def __init__(self, cfg: SegmentConfig, tables: list[_Table], item_count: int):
        if len(tables) != cfg.n_segments:
            raise ValueError(f"expected {cfg.n_segments} tables, got {len(tables)}")
        self.cfg = cfg
        self.tables = tables
        self.item_count = item_count

    @classmethod
    def build(cls, codes, cfg: SegmentConfig) -> "SegmentedIndex":
        """Index an (n, S, k) trit array, or a list of (S, k) trit arrays."""
        S, k = cfg.n_segments, cfg.segment_length
        if isinstance(codes, np.ndarray) and codes.ndim == 3:
            if codes.shape[1:] != (S, k):
                raise ValueError(f"codes have segment shape {codes.shape[1:]}, expected {(S, k)}")
            arr = codes.astype(np.int8, copy=False)
        else:
            rows = []
            for i, c in enumerate(codes):
                c = np.asarray(c, dtype=np.int8)
                if c.shape != (S, k):
                    raise ValueError(f"code {i} has segment shape {c.shape}, expected {(S, k)}")
                rows.append(c)
            arr = np.stack(rows) if rows else np.empty((0, S, k), dtype=np.int8)
        n = arr.shape[0]
        ids = np.arange(n, dtype=np.uint32)
        tables = []
        for s in range(S):
            try:
                keys, valid = expand_keys(arr[:, s, :], cfg.max_relaxed)
            except ValueError as e:
                bad = int(np.flatnonzero((arr[:, s, :] == 0).sum(axis=1) > cfg.max_relaxed)[0])
                raise ValueError(f"code {bad}, segment {s}: {e}") from None
            flat_keys = keys[valid]
            flat_ids = np.broadcast_to(ids[:, None], keys.shape)[valid]
            order = np.lexsort((flat_ids, flat_keys))
            flat_keys, flat_ids = flat_keys[order], flat_ids[order]
            uniq, starts = np.unique(flat_keys, return_index=True)
            offsets = np.append(starts, flat_keys.size).astype(np.int64)
            tables.append(_Table(uniq.astype(np.uint32), offsets, flat_ids.astype(np.uint32)))
        return cls(cfg, tables, n)

    def table_hits(self, query) -> list[np.ndarray]:
        """Per table, the deduplicated ids colliding with the query segment."""
        query = np.asarray(query)
        if query.shape != (self.cfg.n_segments, self.cfg.segment_length):
            raise ValueError(
                f"query has segment shape {query.shape}, expected "
                f"{(self.cfg.n_segments, self.cfg.segment_length)}"
            )
        k = self.cfg.segment_length
        hits = []
        for table, seg in zip(self.tables, query):
            lists = [table.lookup(key, k) for key in expand(seg)]
            if len(lists) == 1:
                hits.append(lists[0])
            else:
                hits.append(np.unique(np.concatenate(lists)))
        return hits

    def recall(self, query, max_n: int | None = DEFAULT_MAX_CANDIDATES) -> RecallResult:
        """Candidates colliding with the query in at least one segment, best first."""
        per_table = [h for h in self.table_hits(query) if h.size]
        if not per_table:
            return RecallResult(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64), max_n)
        ids, counts = np.unique(np.concatenate(per_table), return_counts=True)
        return bucket_rank(ids, counts, self.cfg.n_segments, max_n)

    def recall_batch(self, queries, max_n: int | None = DEFAULT_MAX_CANDIDATES) -> list[RecallResult]:
        return [self.recall(q, max_n) for q in np.asarray(queries)]

    def posting_counts(self) -> list[int]:
        return [t.n_postings() for t in self.tables]

    # -- serialization ------------------------------------------------------

    def to_bytes(self) -> bytes:
        cfg = self.cfg
        parts = [
            INDEX_MAGIC,
            struct.pack("<IHHBI", INDEX_VERSION, cfg.n_bits, cfg.segment_length, cfg.max_relaxed, self.item_count),
        ]
        for t in self.tables:
            n_keys = len(t.keys)
            lengths = np.diff(t.offsets)
            # (key, len, postings...) records, keys ascending, laid out in one u32 buffer
            buf = np.empty(2 * n_keys + t.postings.size, dtype="<u4")
            rec = t.offsets[:-1] + 2 * np.arange(n_keys)
            buf[rec] = t.keys
            buf[rec + 1] = lengths
            body = np.ones(buf.size, dtype=bool)
            body[rec] = False
            body[rec + 1] = False
            buf[body] = t.postings
            parts.append(struct.pack("<I", n_keys))
            parts.append(buf.tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes, threshold: float = 0.5) -> "SegmentedIndex":
        from .storage import FormatError, Reader

        r = Reader(data)
        r.expect_magic(INDEX_MAGIC)
        r.expect_version(INDEX_VERSION)
        n_bits, k, k_relax, item_count = r.u16(), r.u16(), r.u8(), r.u32()
        try:
            cfg = SegmentConfig(n_bits, k, k_relax, threshold)
        except ValueError as e:
            raise FormatError(f"invalid segment configuration: {e}", 8) from None
        tables = []
        for s in range(cfg.n_segments):
            at = r.pos
            n_keys = r.u32()
            if n_keys > (1 << k) or 8 * n_keys > len(r.data) - r.pos:
                raise FormatError(f"table {s}: key count {n_keys} impossible for this payload", at)
            keys = np.empty(n_keys, dtype=np.uint32)
            offsets = np.zeros(n_keys + 1, dtype=np.int64)
            chunks = []
            for j in range(n_keys):
                at = r.pos
                key, length = r.u32(), r.u32()
                if key >> k:
                    raise FormatError(f"table {s}: key {key} exceeds {k} bits", at)
                if j and key <= keys[j - 1]:
                    raise FormatError(f"table {s}: keys not strictly ascending", at)
                post = r.u32_array(length)
                if length and (post[-1] >= item_count or np.any(np.diff(post.astype(np.int64)) <= 0)):
                    raise FormatError(f"table {s}: posting list for key {key} invalid", at)
                keys[j] = key
                offsets[j + 1] = offsets[j] + length
                chunks.append(post)
            postings = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.uint32)
            tables.append(_Table(keys, offsets, postings.astype(np.uint32)))
        r.expect_end()
        return cls(cfg, tables, item_count)
