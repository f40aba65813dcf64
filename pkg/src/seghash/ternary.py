"""Segment algebra for ternary hash codes.

A code of B continuous outputs is cut into S = B / k segments. Each segment is
turned into trits in {+1, 0, -1}, where 0 marks a relaxed (unknown) bit that
matches either binary value. Trits are int8 arrays whose last axis has length k.

A binary key packs one concrete resolution of a segment into an integer:
bit j of the key is set iff position j holds +1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SegmentConfig:
    n_bits: int
    segment_length: int = 16
    max_relaxed: int = 3
    threshold: float = 0.5

    def __post_init__(self):
        if self.n_bits <= 0 or self.segment_length <= 0:
            raise ValueError("n_bits and segment_length must be positive")
        if self.n_bits % self.segment_length:
            raise ValueError(f"n_bits={self.n_bits} is not divisible by segment_length={self.segment_length}")
        if not 0 <= self.max_relaxed <= self.segment_length:
            raise ValueError(f"max_relaxed must lie in [0, {self.segment_length}]")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        if self.segment_length > 32:
            raise ValueError("segment_length above 32 does not fit a u32 key")

    @property
    def n_segments(self) -> int:
        return self.n_bits // self.segment_length

    def without_relaxing(self) -> "SegmentConfig":
        return SegmentConfig(self.n_bits, self.segment_length, 0, self.threshold)


def sign(x) -> np.ndarray:
    """+1 where x > 0, else -1 (zero maps to -1)."""
    return np.where(np.asarray(x) > 0, 1, -1).astype(np.int8)


def segment(o, cfg: SegmentConfig) -> np.ndarray:
    """Reshape outputs (..., B) into (..., S, k) without copying values."""
    o = np.asarray(o)
    if o.shape[-1] != cfg.n_bits:
        raise ValueError(f"expected {cfg.n_bits} outputs, got {o.shape[-1]}")
    return o.reshape(*o.shape[:-1], cfg.n_segments, cfg.segment_length)


def relax(raw, max_relaxed: int, threshold: float) -> np.ndarray:
    """Trits for raw segment values along the last axis.

    Among the `max_relaxed` smallest |values| of each segment (ties go to the
    lower position), those with |value| <= threshold become 0; the rest keep
    their sign.
    """
    raw = np.asarray(raw, dtype=np.float64)
    trits = sign(raw)
    if max_relaxed <= 0:
        return trits
    mag = np.abs(raw)
    picked = np.argsort(mag, axis=-1, kind="stable")[..., :max_relaxed]
    small = np.take_along_axis(mag, picked, axis=-1) <= threshold
    zero = np.zeros(raw.shape, dtype=bool)
    np.put_along_axis(zero, picked, small, axis=-1)
    trits[zero] = 0
    return trits


def ternarize(o, cfg: SegmentConfig, relaxed: bool = True) -> np.ndarray:
    """Segment and relax continuous outputs: (..., B) -> (..., S, k) trits."""
    return relax(segment(o, cfg), cfg.max_relaxed if relaxed else 0, cfg.threshold)


def pack_key(trits) -> int:
    """Pack a fully resolved segment (no zeros) into an integer key."""
    trits = np.asarray(trits)
    if np.any(trits == 0):
        raise ValueError("cannot pack a segment that still has relaxed positions")
    return int(np.sum((trits > 0).astype(np.int64) << np.arange(trits.shape[-1], dtype=np.int64)))


def unpack_key(key: int, k: int) -> np.ndarray:
    bits = (int(key) >> np.arange(k)) & 1
    return np.where(bits == 1, 1, -1).astype(np.int8)


def expand(trits) -> list[int]:
    """Every binary key a ternary segment can resolve to, ascending.

    r zeros give exactly 2**r keys.
    """
    trits = np.asarray(trits)
    base = int(np.sum((trits > 0).astype(np.int64) << np.arange(trits.shape[-1], dtype=np.int64)))
    keys = [base]
    for pos in np.flatnonzero(trits == 0):
        keys += [key | (1 << int(pos)) for key in keys]
    return sorted(keys)


def expand_keys(trits, max_relaxed: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised `expand` over rows of a (n, k) trit array.

    Returns (keys, valid), both (n, 2**max_relaxed); valid[i, t] is False for
    slots beyond the 2**r resolutions of row i. Rows must have at most
    `max_relaxed` zeros.
    """
    trits = np.asarray(trits)
    n, k = trits.shape
    weights = np.int64(1) << np.arange(k, dtype=np.int64)
    base = ((trits > 0).astype(np.int64) * weights).sum(axis=1)
    zero = trits == 0
    n_zero = zero.sum(axis=1)
    if n_zero.size and n_zero.max() > max_relaxed:
        raise ValueError(f"segment has {n_zero.max()} relaxed positions, limit is {max_relaxed}")
    slots = 1 << max_relaxed
    # bit value of the r-th zero position of each row, 0 where absent
    zero_bits = np.zeros((n, max(max_relaxed, 1)), dtype=np.int64)
    if max_relaxed:
        rank = np.cumsum(zero, axis=1) - 1
        rows, cols = np.nonzero(zero)
        zero_bits[rows, rank[rows, cols]] = weights[cols]
    t = np.arange(slots, dtype=np.int64)
    keys = np.repeat(base[:, None], slots, axis=1)
    for r in range(max_relaxed):
        keys |= np.where((t >> r) & 1, zero_bits[:, r : r + 1], 0)
    valid = t[None, :] < (np.int64(1) << n_zero)[:, None]
    return keys, valid


def collide(a, b) -> tuple[bool, np.ndarray]:
    """Segment collision: True unless some position has trit product -1.

    Returns the verdict and the per-position products.
    """
    a = np.asarray(a, dtype=np.int8)
    b = np.asarray(b, dtype=np.int8)
    if a.shape != b.shape:
        raise ValueError(f"segment shapes differ: {a.shape} vs {b.shape}")
    products = a * b
    return bool(products.min(initial=1) != -1), products


def collides(a, b) -> np.ndarray:
    """Broadcasting collision test over the last axis."""
    return np.all(np.asarray(a, dtype=np.int8) * np.asarray(b, dtype=np.int8) >= 0, axis=-1)
