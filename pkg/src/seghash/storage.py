"""On-disk formats: embeddings (SDHE), relevance pairs, checkpoints (SDHM), indexes (SDHI).

All binary formats are little-endian. Writers go through a temp file and an
atomic rename so readers never see a half-written file.
"""

from __future__ import annotations

import logging
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

EMBEDDING_MAGIC = b"SDHE"
EMBEDDING_VERSION = 1


class FormatError(ValueError):
    """A file is malformed. `offset` is the byte position where reading failed."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class Reader:
    """Bounds-checked cursor over a bytes payload."""

    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        end = self.pos + n
        if n < 0 or end > len(self.data):
            raise FormatError(f"truncated: need {n} bytes, {len(self.data) - self.pos} left", self.pos)
        chunk = self.data[self.pos : end]
        self.pos = end
        return chunk

    def _unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))[0]

    def u8(self) -> int:
        return self._unpack("<B")

    def u16(self) -> int:
        return self._unpack("<H")

    def u32(self) -> int:
        return self._unpack("<I")

    def u32_array(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<u4").astype(np.uint32)

    def f32_array(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32)

    def expect_magic(self, magic: bytes):
        got = bytes(self.take(len(magic)))
        if got != magic:
            raise FormatError(f"bad magic {got!r}, expected {magic!r}", 0)

    def expect_version(self, version: int):
        at = self.pos
        got = self.u32()
        if got != version:
            raise FormatError(f"unsupported version {got}, expected {version}", at)

    def expect_end(self):
        if self.pos != len(self.data):
            raise FormatError(f"{len(self.data) - self.pos} trailing bytes", self.pos)


def atomic_write(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- embeddings -------------------------------------------------------------


def embeddings_to_bytes(X) -> bytes:
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ValueError(f"embeddings must be a non-empty 2-d array, got shape {X.shape}")
    header = EMBEDDING_MAGIC + struct.pack("<III", EMBEDDING_VERSION, X.shape[0], X.shape[1])
    return header + np.ascontiguousarray(X, dtype="<f4").tobytes()


def embeddings_from_bytes(data: bytes) -> np.ndarray:
    r = Reader(data)
    r.expect_magic(EMBEDDING_MAGIC)
    r.expect_version(EMBEDDING_VERSION)
    count_at = r.pos
    count, dim = r.u32(), r.u32()
    if count == 0:
        raise FormatError("embedding count is zero", count_at)
    if dim == 0:
        raise FormatError("embedding dimension is zero", count_at + 4)
    X = r.f32_array(count * dim).reshape(count, dim)
    r.expect_end()
    return X


def save_embeddings(path, X):
    atomic_write(path, embeddings_to_bytes(X))


def load_embeddings(path) -> np.ndarray:
    """Read an SDHE file into a (count, dim) float32 array."""
    return embeddings_from_bytes(Path(path).read_bytes())


# -- relevance --------------------------------------------------------------


def save_relevance(path, pairs):
    lines = [f"{int(q)}\t{int(c)}\n" for q, c in pairs]
    atomic_write(path, "".join(lines).encode())


def load_relevance(path, n_queries: int | None = None, n_codes: int | None = None) -> dict[int, set[int]]:
    """Map query index -> set of relevant code indexes.

    A missing path yields identity pairing over `n_queries`.
    """
    if path is None or not Path(path).exists():
        if n_queries is None:
            raise FileNotFoundError(f"relevance file {path} not found and no query count for identity pairing")
        if n_codes is not None and n_codes < n_queries:
            raise ValueError("identity pairing needs at least as many codes as queries")
        return {i: {i} for i in range(n_queries)}

    relevant: dict[int, set[int]] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise FormatError(f"line {lineno}: expected 'query<TAB>code', got {line!r}")
        try:
            q, c = int(fields[0]), int(fields[1])
        except ValueError:
            raise FormatError(f"line {lineno}: non-integer index in {line!r}") from None
        if q < 0 or (n_queries is not None and q >= n_queries):
            raise FormatError(f"line {lineno}: query index {q} out of range")
        if c < 0 or (n_codes is not None and c >= n_codes):
            raise FormatError(f"line {lineno}: code index {c} out of range")
        targets = relevant.setdefault(q, set())
        if c in targets:
            log.warning("relevance line %d duplicates pair (%d, %d); ignored", lineno, q, c)
        targets.add(c)
    return relevant


# -- checkpoints and indexes --------------------------------------------------


def save_checkpoint(path, head):
    atomic_write(path, head.to_bytes())


def load_checkpoint(path):
    from .hashnet import HashHead

    return HashHead.from_bytes(Path(path).read_bytes())


def save_index(path, index):
    atomic_write(path, index.to_bytes())


def load_index(path):
    from .index import SegmentedIndex

    return SegmentedIndex.from_bytes(Path(path).read_bytes())
