"""scikit-learn style front end: a hasher (fit / transform) and a search index over it."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_consistent_length

from .align import AlignConfig, iterative_train
from .baselines import dense_rerank, hamming_scan, pack_bits
from .hashnet import HashHead, forward
from .index import DEFAULT_MAX_CANDIDATES, RecallResult, SegmentedIndex
from .pretrain import InitialLossConfig, discretize, pretrain_run
from .ternary import SegmentConfig, relax, segment

MODES = ("A_BR", "A_SR", "A_NR", "NA_BR", "NA_SR", "NA_NR")


def parse_mode(mode: str) -> tuple[bool, bool, bool]:
    """Ablation mode -> (iterative, relax_code, relax_query).

    A / NA: with or without iterative alignment. BR: both heads relax,
    SR: only the code head relaxes, NR: no relaxing.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
    align_part, relax_part = mode.split("_")
    return align_part == "A", relax_part in ("BR", "SR"), relax_part == "BR"


def _seeds(random_state, n):
    return [int(s) for s in np.random.SeedSequence(random_state).generate_state(n)]


class SegmentedHasher(TransformerMixin, BaseEstimator):
    """Learn a code head and a query head whose segmented ternary codes agree.

    ``fit(X, y)`` takes code embeddings X and the matching query embeddings y
    (row i of each forms a pair). ``transform`` returns (n, S, k) int8 trits.
    """

    def __init__(
        self,
        n_bits=128,
        hidden_size=1536,
        segment_length=16,
        max_relaxed=3,
        threshold=0.5,
        mode="A_BR",
        margin=0.2,
        negative_count="all",
        similarity="cosine",
        gamma=1.0,
        alternation_period=5,
        pretrain_epochs=100,
        align_epochs=100,
        learning_rate=1e-4,
        batch_size=128,
        patience=10,
        negatives="fixed",
        validation_fraction=0.1,
        random_state=0,
    ):
        self.n_bits = n_bits
        self.hidden_size = hidden_size
        self.segment_length = segment_length
        self.max_relaxed = max_relaxed
        self.threshold = threshold
        self.mode = mode
        self.margin = margin
        self.negative_count = negative_count
        self.similarity = similarity
        self.gamma = gamma
        self.alternation_period = alternation_period
        self.pretrain_epochs = pretrain_epochs
        self.align_epochs = align_epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.patience = patience
        self.negatives = negatives
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _configs(self):
        iterative, relax_code, relax_query = parse_mode(self.mode)
        seg = SegmentConfig(self.n_bits, self.segment_length, self.max_relaxed, self.threshold)
        align = AlignConfig(
            gamma=self.gamma,
            alternation_period=self.alternation_period,
            max_epochs=max(self.align_epochs, self.alternation_period),
            negatives=self.negatives,
            relax_code=relax_code,
            relax_query=relax_query,
        )
        return iterative, seg, align

    def fit(self, X, y, init_heads=None):
        """Pretrain both heads (unless `init_heads` is given), then align them per `mode`.

        init_heads: optional (code_head, query_head) pair, e.g. another
        hasher's ``initial_heads_``, to share one pretraining across modes.
        """
        X = check_array(X, dtype=np.float64)
        y = check_array(y, dtype=np.float64)
        check_consistent_length(X, y)
        if X.shape[1] != y.shape[1]:
            raise ValueError(f"code and query embeddings differ in width: {X.shape[1]} vs {y.shape[1]}")
        iterative, seg, align_cfg = self._configs()
        s_code, s_query, s_split, s_pre, s_align = _seeds(self.random_state, 5)

        n = X.shape[0]
        n_val = int(round(n * self.validation_fraction)) if self.validation_fraction else 0
        if n_val and n - n_val >= 2 and n_val >= 2:
            perm = np.random.default_rng(s_split).permutation(n)
            val, train = perm[:n_val], perm[n_val:]
            Xv, yv = X[val], y[val]
        else:
            train = np.arange(n)
            Xv = yv = None
        Xt, yt = X[train], y[train]

        if init_heads is None:
            dims = [X.shape[1], self.hidden_size, self.hidden_size, self.n_bits]
            loss_cfg = InitialLossConfig(self.margin, self.negative_count, self.similarity)
            pre = pretrain_run(
                HashHead.init(dims, s_code),
                HashHead.init(dims, s_query),
                Xt,
                yt,
                loss_cfg,
                epochs=self.pretrain_epochs,
                seed=s_pre,
                learning_rate=self.learning_rate,
                batch_size=self.batch_size,
                patience=self.patience,
                val_code_X=Xv,
                val_query_X=yv,
            )
            self.pretrain_history_ = pre.history
            init_heads = (pre.code_head, pre.query_head)
        else:
            self.pretrain_history_ = []
        code_head, query_head = init_heads
        if code_head.input_dim != X.shape[1] or code_head.n_bits != self.n_bits:
            raise ValueError("initial heads do not match the data width or n_bits")
        self.initial_heads_ = (code_head.copy(), query_head.copy())

        if iterative:
            res = iterative_train(
                code_head,
                query_head,
                Xt,
                yt,
                seg,
                align_cfg,
                seed=s_align,
                learning_rate=self.learning_rate,
                batch_size=self.batch_size,
                val_code_X=Xv,
                val_query_X=yv,
            )
            self.align_log_ = res.log
            code_head, query_head = res.code_head, res.query_head
        else:
            self.align_log_ = []
        self.code_head_, self.query_head_ = code_head.copy(), query_head.copy()
        self.segment_config_ = seg
        self.n_features_in_ = X.shape[1]
        return self

    @classmethod
    def from_heads(cls, code_head: HashHead, query_head: HashHead, **params) -> "SegmentedHasher":
        """A fitted hasher wrapping existing heads, e.g. loaded from checkpoints."""
        if code_head.layer_dims != query_head.layer_dims:
            raise ValueError("code and query heads have different layer sizes")
        params.setdefault("n_bits", code_head.n_bits)
        hasher = cls(**params)
        iterative, seg, _ = hasher._configs()
        if seg.n_bits != code_head.n_bits:
            raise ValueError(f"heads emit {code_head.n_bits} bits, configuration expects {seg.n_bits}")
        hasher.code_head_, hasher.query_head_ = code_head.copy(), query_head.copy()
        hasher.initial_heads_ = (code_head.copy(), query_head.copy())
        hasher.pretrain_history_, hasher.align_log_ = [], []
        hasher.segment_config_ = seg
        hasher.n_features_in_ = code_head.input_dim
        return hasher

    def _head(self, modality):
        check_is_fitted(self, "code_head_")
        if modality == "code":
            return self.code_head_
        if modality == "query":
            return self.query_head_
        raise ValueError(f"modality must be 'code' or 'query', got {modality!r}")

    def relaxes(self, modality) -> bool:
        _, relax_code, relax_query = parse_mode(self.mode)
        return relax_code if modality == "code" else relax_query

    def decision_function(self, X, modality="code") -> np.ndarray:
        """Continuous hash outputs in (-1, 1), shape (n, n_bits)."""
        X = check_array(X, dtype=np.float64)
        return forward(self._head(modality), X)

    def binary_codes(self, X, modality="code") -> np.ndarray:
        return discretize(self.decision_function(X, modality))

    def transform(self, X, modality="code") -> np.ndarray:
        check_is_fitted(self, "segment_config_")
        seg = self.segment_config_
        k_relax = seg.max_relaxed if self.relaxes(modality) else 0
        return relax(segment(self.decision_function(X, modality), seg), k_relax, seg.threshold)


class SegmentedSearch(BaseEstimator):
    """Table-based recall over a fitted SegmentedHasher, with optional dense re-rank."""

    def __init__(self, hasher=None, max_candidates=DEFAULT_MAX_CANDIDATES, rerank=True, metric="cosine"):
        self.hasher = hasher
        self.max_candidates = max_candidates
        self.rerank = rerank
        self.metric = metric

    def fit(self, X, y=None):
        """Index code embeddings X; row numbers become ids."""
        if self.hasher is None:
            raise ValueError("SegmentedSearch needs a fitted hasher")
        X = check_array(X, dtype=np.float64)
        self.index_ = SegmentedIndex.build(self.hasher.transform(X, "code"), self.hasher.segment_config_)
        self.packed_codes_ = pack_bits(self.hasher.binary_codes(X, "code"))
        self.code_embeddings_ = X
        return self

    def recall(self, Q) -> list[RecallResult]:
        check_is_fitted(self, "index_")
        return self.index_.recall_batch(self.hasher.transform(Q, "query"), self.max_candidates)

    def hamming_recall(self, Q) -> list[np.ndarray]:
        """Linear-scan recall over the binary codes, for comparison."""
        check_is_fitted(self, "index_")
        packed = pack_bits(self.hasher.binary_codes(Q, "query"))
        return [hamming_scan(q, self.packed_codes_, self.max_candidates, partial=True)[0] for q in packed]

    def kneighbors(self, Q, n_neighbors=None) -> list[np.ndarray]:
        """Ranked code ids per query: recalled candidates, re-ranked if enabled."""
        Q = check_array(Q, dtype=np.float64)
        out = []
        for q, res in zip(Q, self.recall(Q)):
            ids = dense_rerank(q, res.ids, self.code_embeddings_, self.metric) if self.rerank else res.ids
            out.append(ids[:n_neighbors] if n_neighbors is not None else ids)
        return out


def dense_rankings(Q, X, metric="cosine", top_n=None) -> list[np.ndarray]:
    """Exhaustive dense retrieval: every code ranked by similarity to each query."""
    Q = check_array(Q, dtype=np.float64)
    X = check_array(X, dtype=np.float64)
    if metric == "cosine":
        Q = Q / np.maximum(np.linalg.norm(Q, axis=1, keepdims=True), 1e-12)
        X = X / np.maximum(np.linalg.norm(X, axis=1, keepdims=True), 1e-12)
    sims = Q @ X.T
    ids = np.arange(X.shape[0])
    out = []
    for row in sims:
        order = np.lexsort((ids, -row))
        out.append(order[:top_n] if top_n is not None else order)
    return out
