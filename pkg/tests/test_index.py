import numpy as np
import pytest

from seghash.index import RecallResult, SegmentedIndex, bucket_rank
from seghash.storage import FormatError
from seghash.ternary import SegmentConfig
from oracles import brute_force_recall_set


def random_codes(rng, n, S, k, k_relax, zero_rate=0.15):
    codes = rng.choice(np.array([-1, 1], dtype=np.int8), size=(n, S, k))
    zeros = rng.random((n, S, k)) < zero_rate
    codes[zeros] = 0
    for c in codes.reshape(-1, k):
        extra = np.flatnonzero(c == 0)[k_relax:]
        c[extra] = 1
    return codes


def near_query(rng, code, flip=0.1, zero_rate=0.1, k_relax=3):
    q = code.copy()
    q[q == 0] = 1
    flips = rng.random(q.shape) < flip
    q[flips] *= -1
    q[rng.random(q.shape) < zero_rate] = 0
    for seg in q:
        seg[np.flatnonzero(seg == 0)[k_relax:]] = -1
    return q


class TestBuild:
    def test_empty(self):
        idx = SegmentedIndex.build(np.empty((0, 2, 3), dtype=np.int8), SegmentConfig(6, 3, 1))
        assert idx.item_count == 0
        assert len(idx.tables) == 2
        assert idx.posting_counts() == [0, 0]

    def test_single_code_expansion_counts(self):
        idx = SegmentedIndex.build([[[1, 0, -1], [1, 1, -1]]], SegmentConfig(6, 3, 1))
        t0, t1 = (t.posting_dict() for t in idx.tables)
        assert len(t0) == 2 and all(v.tolist() == [0] for v in t0.values())
        assert len(t1) == 1 and all(v.tolist() == [0] for v in t1.values())

    def test_posting_totals_match_zero_counts(self, rng):
        cfg = SegmentConfig(12, 4, 2)
        codes = random_codes(rng, 100, 3, 4, 2, zero_rate=0.3)
        idx = SegmentedIndex.build(codes, cfg)
        expected = (2 ** (codes == 0).sum(axis=2)).sum(axis=0)
        assert idx.posting_counts() == expected.tolist()

    def test_postings_sorted_unique(self, rng):
        codes = random_codes(rng, 300, 2, 4, 2, zero_rate=0.3)
        idx = SegmentedIndex.build(codes, SegmentConfig(8, 4, 2))
        for t in idx.tables:
            for post in t.posting_dict().values():
                assert np.all(np.diff(post.astype(np.int64)) > 0)

    def test_shape_mismatch_names_code(self):
        with pytest.raises(ValueError, match="code 1"):
            SegmentedIndex.build([np.ones((2, 3)), np.ones((2, 4))], SegmentConfig(6, 3, 1))

    def test_too_many_zeros_names_code(self):
        codes = np.ones((3, 2, 3), dtype=np.int8)
        codes[2, 1, :2] = 0
        with pytest.raises(ValueError, match="code 2"):
            SegmentedIndex.build(codes, SegmentConfig(6, 3, 1))


class TestRecall:
    def test_self_query_hits_every_table(self, rng):
        cfg = SegmentConfig(32, 16, 3)
        codes = random_codes(rng, 50, 2, 16, 3)
        idx = SegmentedIndex.build(codes, cfg)
        res = idx.recall(codes[7], max_n=None)
        assert dict(res.candidates)[7] == cfg.n_segments
        assert res.hits[0] == cfg.n_segments

    def test_worked_example_tie_break(self):
        codes = [[[1, 1], [-1, -1]], [[1, -1], [-1, -1]]]
        idx = SegmentedIndex.build(codes, SegmentConfig(4, 2, 1))
        res = idx.recall([[1, 0], [-1, -1]])
        assert res.candidates == [(0, 2), (1, 2)]
        assert {0, 1} == brute_force_recall_set([[1, 0], [-1, -1]], codes)

    def test_no_collision_is_empty(self):
        idx = SegmentedIndex.build([[[1, 1], [1, 1]]], SegmentConfig(4, 2, 0))
        assert len(idx.recall([[-1, -1], [-1, -1]])) == 0

    def test_matches_brute_force(self, rng):
        cfg = SegmentConfig(32, 16, 3)
        codes = random_codes(rng, 200, 2, 16, 3)
        idx = SegmentedIndex.build(codes, cfg)
        for _ in range(30):
            q = near_query(rng, codes[rng.integers(len(codes))], flip=0.08)
            res = idx.recall(q, max_n=None)
            assert set(res.ids.tolist()) == brute_force_recall_set(q, codes)
            assert np.all(res.hits <= cfg.n_segments)

    def test_ordering_and_truncation(self, rng):
        cfg = SegmentConfig(12, 4, 2)
        codes = random_codes(rng, 400, 3, 4, 2, zero_rate=0.3)
        idx = SegmentedIndex.build(codes, cfg)
        q = near_query(rng, codes[0], k_relax=2)
        full = idx.recall(q, max_n=None)
        pairs = full.candidates
        assert pairs == sorted(pairs, key=lambda p: (-p[1], p[0]))
        short = idx.recall(q, max_n=10)
        assert short.candidates == pairs[:10]
        assert short.truncated_to == 10

    def test_hit_counts_match_per_table_collisions(self, rng):
        cfg = SegmentConfig(12, 4, 2)
        codes = random_codes(rng, 150, 3, 4, 2, zero_rate=0.3)
        idx = SegmentedIndex.build(codes, cfg)
        q = near_query(rng, codes[3], k_relax=2)
        res = dict(idx.recall(q, max_n=None).candidates)
        for cid, code in enumerate(codes):
            n = sum(all(a * b != -1 for a, b in zip(qs, cs)) for qs, cs in zip(q, code))
            assert res.get(cid, 0) == n

    def test_adding_codes_never_lowers_hits(self, rng):
        cfg = SegmentConfig(12, 4, 2)
        codes = random_codes(rng, 120, 3, 4, 2, zero_rate=0.3)
        q = near_query(rng, codes[0], k_relax=2)
        small = dict(SegmentedIndex.build(codes[:80], cfg).recall(q, max_n=None).candidates)
        large = dict(SegmentedIndex.build(codes, cfg).recall(q, max_n=None).candidates)
        assert all(large[c] >= h for c, h in small.items())

    def test_query_shape_checked(self):
        idx = SegmentedIndex.build([[[1, 1], [1, 1]]], SegmentConfig(4, 2, 0))
        with pytest.raises(ValueError):
            idx.recall([[1, 1, 1]])

    def test_sparse_key_layout(self, rng):
        # segment_length above the dense threshold exercises the searchsorted path
        cfg = SegmentConfig(24, 24, 2)
        codes = random_codes(rng, 60, 1, 24, 2)
        idx = SegmentedIndex.build(codes, cfg)
        for cid in (0, 17, 59):
            assert cid in idx.recall(codes[cid], max_n=None).ids


def test_bucket_rank_keeps_id_order():
    res = bucket_rank(np.array([1, 4, 5, 9]), np.array([2, 3, 2, 3]), 3, None)
    assert res.candidates == [(4, 3), (9, 3), (1, 2), (5, 2)]


class TestSerialization:
    def test_round_trip_preserves_recall(self, rng):
        cfg = SegmentConfig(32, 16, 3)
        codes = random_codes(rng, 300, 2, 16, 3)
        idx = SegmentedIndex.build(codes, cfg)
        loaded = SegmentedIndex.from_bytes(idx.to_bytes())
        assert loaded.item_count == 300 and loaded.cfg == cfg
        for _ in range(50):
            q = near_query(rng, codes[rng.integers(300)])
            assert loaded.recall(q) == idx.recall(q)

    def test_empty_round_trip(self):
        idx = SegmentedIndex.build(np.empty((0, 2, 3), dtype=np.int8), SegmentConfig(6, 3, 1))
        loaded = SegmentedIndex.from_bytes(idx.to_bytes())
        assert loaded.item_count == 0 and loaded.posting_counts() == [0, 0]

    def test_layout(self):
        idx = SegmentedIndex.build([[[1, 0, -1]]], SegmentConfig(3, 3, 1))
        data = idx.to_bytes()
        assert data[:4] == b"SDHI"
        # header 4+4+2+2+1+4, one table: count + 2 records of (key, len, id)
        assert len(data) == 17 + 4 + 2 * 12
        assert data.startswith(b"SDHI\x01\x00\x00\x00\x03\x00\x03\x00\x01\x01\x00\x00\x00")

    def test_bad_magic(self):
        data = bytearray(SegmentedIndex.build([[[1, 1, 1]]], SegmentConfig(3, 3, 0)).to_bytes())
        data[0:4] = b"XXXX"
        with pytest.raises(FormatError, match="magic"):
            SegmentedIndex.from_bytes(bytes(data))

    def test_truncated(self, rng):
        data = SegmentedIndex.build(random_codes(rng, 20, 2, 16, 3), SegmentConfig(32, 16, 3)).to_bytes()
        for cut in (3, 10, 20, len(data) - 1):
            with pytest.raises(FormatError):
                SegmentedIndex.from_bytes(data[:cut])

    def test_fuzzed_bytes_never_crash(self, rng):
        data = SegmentedIndex.build(random_codes(rng, 30, 2, 4, 2, 0.3), SegmentConfig(8, 4, 2)).to_bytes()
        for _ in range(300):
            corrupt = bytearray(data)
            for pos in rng.integers(0, len(data), size=3):
                corrupt[pos] = rng.integers(0, 256)
            try:
                SegmentedIndex.from_bytes(bytes(corrupt))
            except FormatError:
                pass


def test_recall_result_equality():
    a = RecallResult(np.array([1, 2]), np.array([2, 1]), 300)
    assert a == RecallResult(np.array([1, 2]), np.array([2, 1]), 300)
    assert a != RecallResult(np.array([2, 1]), np.array([2, 1]), 300)
