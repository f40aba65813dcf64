"""Initial hashing training: contrastive loss over matched code/query pairs."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .hashnet import HashHead, NonFiniteError, OptimizerState, adamw_step, backward, forward_cached

log = logging.getLogger(__name__)

ALL_IN_BATCH = "all"


@dataclass(frozen=True)
class InitialLossConfig:
    """Loss = sum_i (1 - sim(c_i, q_i)) + kappa * mean_{j != k} max(0, sim(c_j, q_k) - margin).

    The mean runs over all ordered in-batch non-matching pairs. With
    ``negative_count="all"`` kappa equals the number of such pairs, so the
    second term is their plain sum.
    """

    margin: float = 0.2
    negative_count: int | str = ALL_IN_BATCH
    similarity: str = "cosine"

    def __post_init__(self):
        if not np.isfinite(self.margin) or self.margin < 0:
            raise ValueError("margin must be finite and non-negative")
        if self.similarity not in ("cosine", "dot"):
            raise ValueError(f"similarity must be 'cosine' or 'dot', got {self.similarity!r}")
        if self.negative_count != ALL_IN_BATCH and (
            not isinstance(self.negative_count, (int, np.integer)) or self.negative_count < 1
        ):
            raise ValueError("negative_count must be a positive integer or 'all'")

    def kappa(self, n: int) -> float:
        n_neg = n * (n - 1)
        if self.negative_count == ALL_IN_BATCH:
            return float(n_neg)
        if self.negative_count > n - 1:
            raise ValueError(f"negative_count={self.negative_count} exceeds n-1={n - 1} in-batch negatives")
        return float(self.negative_count)


def initial_loss(code_out, query_out, cfg: InitialLossConfig = InitialLossConfig()):
    """Loss value and its gradients w.r.t. both output matrices.

    Returns (loss, d_code_out, d_query_out).
    """
    C = np.asarray(code_out, dtype=np.float64)
    Q = np.asarray(query_out, dtype=np.float64)
    if C.shape != Q.shape or C.ndim != 2:
        raise ValueError(f"code and query outputs must be matching 2-d arrays, got {C.shape} and {Q.shape}")
    n = C.shape[0]
    if n < 2:
        raise ValueError("need at least two pairs to form in-batch negatives")

    if cfg.similarity == "cosine":
        c_norm = np.maximum(np.linalg.norm(C, axis=1, keepdims=True), 1e-12)
        q_norm = np.maximum(np.linalg.norm(Q, axis=1, keepdims=True), 1e-12)
        Cn, Qn = C / c_norm, Q / q_norm
    else:
        Cn, Qn = C, Q
    sim = Cn @ Qn.T

    off = ~np.eye(n, dtype=bool)
    excess = sim - cfg.margin
    active = off & (excess > 0)
    weight = cfg.kappa(n) / (n * (n - 1))
    loss = float(np.sum(1.0 - np.diag(sim)) + weight * np.sum(excess[active]))

    d_sim = np.where(active, weight, 0.0)
    d_sim[np.diag_indices(n)] = -1.0
    dCn = d_sim @ Qn
    dQn = d_sim.T @ Cn
    if cfg.similarity == "cosine":
        dC = (dCn - Cn * np.sum(dCn * Cn, axis=1, keepdims=True)) / c_norm
        dQ = (dQn - Qn * np.sum(dQn * Qn, axis=1, keepdims=True)) / q_norm
    else:
        dC, dQ = dCn, dQn
    return loss, dC, dQ


def discretize(o) -> np.ndarray:
    """+1 where the output is strictly positive, -1 otherwise."""
    return np.where(np.asarray(o) > 0, 1, -1).astype(np.int8)


def batches(n: int, batch_size: int, rng: np.random.Generator | None = None) -> list[np.ndarray]:
    """Split range(n) (shuffled when rng is given) into near-equal batches of >= 2 items."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    n_batches = max(1, min(-(-n // batch_size), n // 2))
    return np.array_split(order, n_batches)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_loss: float


@dataclass
class PretrainResult:
    code_head: HashHead
    query_head: HashHead
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    def loss_curve_csv(self) -> str:
        lines = ["epoch,loss,val_loss"]
        lines += [f"{r.epoch},{r.loss!r},{r.val_loss!r}" for r in self.history]
        return "\n".join(lines) + "\n"


def _eval_loss(code_head, query_head, Xc, Xq, cfg, batch_size) -> float:
    total = 0.0
    for idx in batches(len(Xc), batch_size):
        oc = forward_cached(code_head, Xc[idx]).output
        oq = forward_cached(query_head, Xq[idx]).output
        total += initial_loss(oc, oq, cfg)[0]
    return total / len(Xc)


def pretrain_run(
    code_head: HashHead,
    query_head: HashHead,
    code_X,
    query_X,
    cfg: InitialLossConfig = InitialLossConfig(),
    epochs: int = 100,
    seed: int = 0,
    learning_rate: float = 1e-4,
    batch_size: int = 128,
    patience: int = 10,
    val_code_X=None,
    val_query_X=None,
) -> PretrainResult:
    """Train both heads jointly; the inputs are not modified.

    Stops once validation loss (training loss if no validation set) has not
    improved for `patience` epochs, and returns the best heads seen.
    """
    Xc = np.asarray(code_X, dtype=np.float64)
    Xq = np.asarray(query_X, dtype=np.float64)
    if Xc.shape != Xq.shape:
        raise ValueError(f"code and query embeddings must align, got {Xc.shape} and {Xq.shape}")
    if len(Xc) < 2:
        raise ValueError("need at least two training pairs")
    has_val = val_code_X is not None and val_query_X is not None and len(val_code_X) >= 2
    if has_val:
        Vc = np.asarray(val_code_X, dtype=np.float64)
        Vq = np.asarray(val_query_X, dtype=np.float64)

    code_head, query_head = code_head.copy(), query_head.copy()
    opt_c = OptimizerState.for_head(code_head, learning_rate=learning_rate)
    opt_q = OptimizerState.for_head(query_head, learning_rate=learning_rate)
    rng = np.random.default_rng(seed)
    result = PretrainResult(code_head.copy(), query_head.copy())
    best = np.inf
    stale = 0

    for epoch in range(1, epochs + 1):
        total = 0.0
        for idx in batches(len(Xc), batch_size, rng):
            cache_c = forward_cached(code_head, Xc[idx])
            cache_q = forward_cached(query_head, Xq[idx])
            loss, dC, dQ = initial_loss(cache_c.output, cache_q.output, cfg)
            if not np.isfinite(loss):
                raise NonFiniteError(f"non-finite pretraining loss at epoch {epoch}")
            adamw_step(code_head, backward(code_head, Xc[idx], dC, cache_c), opt_c)
            adamw_step(query_head, backward(query_head, Xq[idx], dQ, cache_q), opt_q)
            total += loss
        train_loss = total / len(Xc)
        val_loss = _eval_loss(code_head, query_head, Vc, Vq, cfg, batch_size) if has_val else float("nan")
        result.history.append(EpochRecord(epoch, train_loss, val_loss))
        log.info("pretrain epoch %d loss %.5f val %.5f", epoch, train_loss, val_loss)

        monitored = val_loss if has_val else train_loss
        if monitored < best:
            best, stale = monitored, 0
            result.code_head, result.query_head = code_head.copy(), query_head.copy()
            result.best_epoch = epoch
        else:
            stale += 1
            if stale >= patience:
                log.info("pretrain stopped early at epoch %d (best %d)", epoch, result.best_epoch)
                break
    return result
