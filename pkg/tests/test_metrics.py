import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from seghash.metrics import (
    dual_relaxed_count,
    faithfulness,
    first_relevant_rank,
    mrr,
    ndcg_at_k,
    recall_at_k,
    repair_ratio,
)

franks_st = st.lists(st.one_of(st.none(), st.integers(1, 50)), min_size=1, max_size=30)


class TestRecallAtK:
    def test_all_first(self):
        assert recall_at_k([1, 1, 1], 1) == 1.0

    def test_with_miss(self):
        assert recall_at_k([1, 3, None], 2) == pytest.approx(1 / 3)

    def test_large_k_counts_any_hit(self):
        assert recall_at_k([1, 3, None, 7], 100) == 0.75

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            recall_at_k([], 1)

    @given(franks_st)
    def test_monotone_in_k(self, franks):
        values = [recall_at_k(franks, k) for k in range(1, 52)]
        assert values == sorted(values)


class TestMrr:
    def test_all_first(self):
        assert mrr([1, 1]) == 1.0

    def test_arithmetic(self):
        assert mrr([1, 2, 4]) == pytest.approx(1.75 / 3, abs=1e-15)

    def test_all_misses(self):
        assert mrr([None, None]) == 0.0

    @given(franks_st)
    def test_bounded_by_recall(self, franks):
        assert mrr(franks) <= recall_at_k(franks, 10**6) + 1e-12

    @given(franks_st, st.randoms())
    def test_order_invariant(self, franks, rnd):
        shuffled = franks[:]
        rnd.shuffle(shuffled)
        assert mrr(shuffled) == pytest.approx(mrr(franks))


class TestNdcg:
    def test_rank_one(self):
        assert ndcg_at_k([[5, 1, 2]], [{5}], 10) == 1.0

    def test_rank_three(self):
        assert ndcg_at_k([[1, 2, 5]], [{5}], 10) == pytest.approx(1 / math.log2(4))
        assert ndcg_at_k([[1, 2, 5]], [{5}], 10) == 0.5

    def test_outside_cutoff(self):
        assert ndcg_at_k([list(range(10)) + [99]], [{99}], 10) == 0.0

    def test_multiple_relevant(self):
        # relevant at ranks 1 and 3, ideal at ranks 1 and 2
        expected = (1 + 1 / math.log2(4)) / (1 + 1 / math.log2(3))
        assert ndcg_at_k([[7, 0, 8]], [{7, 8}], 10) == pytest.approx(expected)

    def test_no_relevant_flagged(self):
        with pytest.warns(UserWarning, match="no relevant"):
            assert ndcg_at_k([[1, 2]], [set()], 10) == 0.0

    @given(st.lists(st.integers(0, 20), min_size=1, max_size=15, unique=True), st.integers(0, 20), st.integers(1, 12))
    def test_bounded(self, ranking, rel, k):
        assert 0.0 <= ndcg_at_k([ranking], [{rel}], k) <= 1.0


def test_first_relevant_rank():
    assert first_relevant_rank([4, 2, 9], {9, 2}) == 2
    assert first_relevant_rank([4, 2], 7) is None


class TestRepairRatio:
    def test_no_relaxed_bits_is_nan(self):
        z = np.zeros((2, 4), dtype=bool)
        assert math.isnan(repair_ratio(np.ones((2, 4)), np.ones((2, 4)), z, z))

    def test_single_misaligned(self):
        code = np.array([[1, 1, -1]])
        query = np.array([[1, -1, -1]])
        relaxed = np.array([[False, True, False]])
        assert repair_ratio(code, query, relaxed, np.zeros_like(relaxed)) == 1.0

    def test_two_pair_fixture(self):
        code = np.array([[1, 1, 1, 1], [-1, -1, -1, -1]])
        query = np.array([[1, -1, 1, 1], [-1, -1, -1, -1]])
        code_relaxed = np.array([[False, True, False, False], [False, False, False, False]])
        query_relaxed = np.array([[False, False, False, False], [True, False, False, False]])
        # bit (0,1) misaligned, bit (1,0) aligned
        assert repair_ratio(code, query, code_relaxed, query_relaxed) == 0.5
        assert repair_ratio(code, query, code_relaxed, query_relaxed, side="code") == 1.0
        assert repair_ratio(code, query, code_relaxed, query_relaxed, side="query") == 0.0

    def test_dual_relaxed_excluded(self):
        code = np.array([[1, 1]])
        query = np.array([[-1, 1]])
        both = np.array([[True, False]])
        assert math.isnan(repair_ratio(code, query, both, both))


class TestDualRelaxed:
    def test_no_zeros(self):
        assert dual_relaxed_count(np.ones((3, 2, 4)), np.ones((3, 2, 4))) == 0.0

    def test_shared_single_zero(self):
        c = np.ones((2, 3, 4))
        c[:, :, 1] = 0
        assert dual_relaxed_count(c, c.copy()) == 1.0

    def test_fixture(self):
        c = np.ones((1, 4, 3))
        q = np.ones((1, 4, 3))
        c[0, :3, 0] = 0
        q[0, :3, 0] = 0
        c[0, 3, 1] = 0
        q[0, 3, 2] = 0
        assert dual_relaxed_count(c, q) == 0.75


class TestFaithfulness:
    def test_identical(self):
        assert faithfulness([[1, 2, 3]], [[3, 2, 1]]) == 1.0

    def test_disjoint(self):
        assert faithfulness([[1, 2]], [[3, 4]]) == 0.0

    def test_ninety_percent(self):
        b = list(range(300))
        a = list(range(30, 330))
        assert faithfulness([a], [b]) == pytest.approx(0.9)
