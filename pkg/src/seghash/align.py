"""Iterative alignment of the two hashing heads.

One head is frozen and supplies per-segment targets; the other is trained
toward them with a bitwise cross-entropy. Targets start from the frozen head's
signs and are pushed away from in-batch negatives that would collide.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .hashnet import HashHead, NonFiniteError, OptimizerState, adamw_step, backward, forward, forward_cached
from .pretrain import batches
from .ternary import SegmentConfig, relax, segment, sign

log = logging.getLogger(__name__)

CLAMP_EPS = 1e-7
SIDES = ("code", "query")


@dataclass(frozen=True)
class AlignConfig:
    gamma: float = 1.0
    alternation_period: int = 5
    max_epochs: int = 100
    # side whose head is frozen during the first phase
    first_fixed: str = "code"
    # where in-batch negatives come from: the frozen head ("fixed") or the trainee ("trainee")
    negatives: str = "fixed"
    relax_code: bool = True
    relax_query: bool = True
    min_improvement: float = 1e-3

    def __post_init__(self):
        if not np.isfinite(self.gamma) or self.gamma <= 0:
            raise ValueError("gamma must be a positive finite number")
        if self.alternation_period < 1:
            raise ValueError("alternation_period must be at least 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be non-negative")
        if self.alternation_period > max(self.max_epochs, 1):
            raise ValueError("alternation_period cannot exceed max_epochs")
        if self.first_fixed not in SIDES:
            raise ValueError(f"first_fixed must be one of {SIDES}")
        if self.negatives not in ("fixed", "trainee"):
            raise ValueError("negatives must be 'fixed' or 'trainee'")

    def relaxed(self, side: str) -> bool:
        return self.relax_code if side == "code" else self.relax_query


def objective_weights(raw, trits, gamma: float) -> np.ndarray:
    return trits * np.exp(gamma * np.abs(raw))


def adjust_objective(positive_raw, positive_ternary, negative_raw, negative_ternary, gamma: float = 1.0) -> np.ndarray:
    """Binary target segments (S, k) for one matched item.

    positive_raw / positive_ternary: frozen head's outputs for the match and
    their relaxed trits. negative_raw / negative_ternary: (m, S, k) arrays for
    m in-batch negatives. A negative only counts in the segments where it
    collides with the positive's relaxed trits.
    """
    pos_raw = np.asarray(positive_raw, dtype=np.float64)
    pos_t = np.asarray(positive_ternary, dtype=np.int8)
    neg_raw = np.asarray(negative_raw, dtype=np.float64).reshape(-1, *pos_raw.shape)
    neg_t = np.asarray(negative_ternary, dtype=np.int8).reshape(-1, *pos_raw.shape)
    h_pos = sign(pos_raw)
    l = h_pos * np.exp(gamma * np.abs(pos_raw))
    if len(neg_t):
        coll = np.all(pos_t[None] * neg_t >= 0, axis=-1)  # (m, S)
        l = l - np.einsum("ms,msk->sk", coll.astype(np.float64), objective_weights(neg_raw, neg_t, gamma))
    return _sign_with_fallback(l, h_pos)


def adjust_objectives(fixed_raw, fixed_ternary, negative_raw, negative_ternary, gamma: float = 1.0) -> np.ndarray:
    """Batched targets: item i uses every other row j != i as a negative.

    All inputs are (n, S, k); returns (n, S, k) targets in {+1, -1}.
    """
    F = np.asarray(fixed_raw, dtype=np.float64)
    Ft = np.asarray(fixed_ternary, dtype=np.int8)
    N = np.asarray(negative_raw, dtype=np.float64)
    Nt = np.asarray(negative_ternary, dtype=np.int8)
    n = F.shape[0]
    h_pos = sign(F)
    # (n, n, S) collisions between item i's positive and row j
    coll = np.all(Ft[:, None] * Nt[None, :] >= 0, axis=-1)
    coll[np.arange(n), np.arange(n)] = False
    l = h_pos * np.exp(gamma * np.abs(F)) - np.einsum(
        "ijs,jsk->isk", coll.astype(np.float64), objective_weights(N, Nt, gamma)
    )
    return _sign_with_fallback(l, h_pos)


def _sign_with_fallback(l, h_pos) -> np.ndarray:
    out = np.where(l > 0, 1, -1).astype(np.int8)
    ties = l == 0
    out[ties] = h_pos[ties]
    return out


def alignment_loss(o, target):
    """Summed bitwise cross-entropy and its gradient w.r.t. `o`.

    Per bit: -(1 - l) ln(1 - o) - (1 + l) ln(1 + o), with o clamped to
    [-1 + 1e-7, 1 - 1e-7].
    """
    o = np.asarray(o, dtype=np.float64)
    l = np.asarray(target, dtype=np.float64)
    if o.shape != l.shape:
        raise ValueError(f"output shape {o.shape} does not match target shape {l.shape}")
    if np.any((l != 1) & (l != -1)):
        raise ValueError("targets must be +1 or -1")
    oc = np.clip(o, -1 + CLAMP_EPS, 1 - CLAMP_EPS)
    loss = float(np.sum(-(1 - l) * np.log1p(-oc) - (1 + l) * np.log1p(oc)))
    grad = (1 - l) / (1 - oc) - (1 + l) / (1 + oc)
    return loss, grad


def positive_collision_rate(code_ternary, query_ternary) -> float:
    """Fraction of matched pairs that collide in at least one segment."""
    c = np.asarray(code_ternary, dtype=np.int8)
    q = np.asarray(query_ternary, dtype=np.int8)
    if c.shape != q.shape:
        raise ValueError(f"shapes differ: {c.shape} vs {q.shape}")
    if len(c) == 0:
        return float("nan")
    hit = np.all(c * q >= 0, axis=-1).any(axis=-1)
    return float(hit.mean())


@dataclass
class CycleRecord:
    cycle: int
    side_trained: str
    epoch: int
    mean_loss: float
    val_positive_collision_rate: float


@dataclass
class AlignResult:
    code_head: HashHead
    query_head: HashHead
    log: list[CycleRecord] = field(default_factory=list)
    converged: bool = False
    error: str | None = None

    def convergence_csv(self) -> str:
        lines = ["cycle,side_trained,epoch,mean_loss,val_positive_collision_rate"]
        lines += [
            f"{r.cycle},{r.side_trained},{r.epoch},{r.mean_loss!r},{r.val_positive_collision_rate!r}"
            for r in self.log
        ]
        return "\n".join(lines) + "\n"


def _ternary(head, X, seg_cfg, relaxed):
    return relax(segment(forward(head, X), seg_cfg), seg_cfg.max_relaxed if relaxed else 0, seg_cfg.threshold)


def iterative_train(
    code_head: HashHead,
    query_head: HashHead,
    code_X,
    query_X,
    seg_cfg: SegmentConfig,
    align_cfg: AlignConfig = AlignConfig(),
    seed: int = 0,
    learning_rate: float = 1e-4,
    batch_size: int = 128,
    val_code_X=None,
    val_query_X=None,
) -> AlignResult:
    """Alternate frozen/trained heads until the validation collision rate plateaus.

    A cycle trains each side for `alternation_period` epochs. Training stops
    when a cycle improves the rate by less than `min_improvement`, or after
    `max_epochs` epochs in total. A non-finite loss stops training and keeps
    the heads from the last completed epoch (reported in `error`).
    """
    X = {"code": np.asarray(code_X, dtype=np.float64), "query": np.asarray(query_X, dtype=np.float64)}
    if X["code"].shape[0] != X["query"].shape[0]:
        raise ValueError("code and query embeddings must have the same number of rows")
    if val_code_X is None or val_query_X is None:
        V = X
    else:
        V = {"code": np.asarray(val_code_X, dtype=np.float64), "query": np.asarray(val_query_X, dtype=np.float64)}

    heads = {"code": code_head.copy(), "query": query_head.copy()}
    opts = {s: OptimizerState.for_head(heads[s], learning_rate=learning_rate) for s in SIDES}
    rng = np.random.default_rng(seed)
    result = AlignResult(heads["code"], heads["query"])
    S, k = seg_cfg.n_segments, seg_cfg.segment_length
    n = X["code"].shape[0]

    def val_rate():
        return positive_collision_rate(
            _ternary(heads["code"], V["code"], seg_cfg, align_cfg.relax_code),
            _ternary(heads["query"], V["query"], seg_cfg, align_cfg.relax_query),
        )

    prev_rate = val_rate()
    fixed_order = (align_cfg.first_fixed, "query" if align_cfg.first_fixed == "code" else "code")
    epochs_done = 0
    cycle = 0
    while epochs_done < align_cfg.max_epochs:
        cycle += 1
        for fixed in fixed_order:
            trainee = "query" if fixed == "code" else "code"
            k_fixed = seg_cfg.max_relaxed if align_cfg.relaxed(fixed) else 0
            k_trainee = seg_cfg.max_relaxed if align_cfg.relaxed(trainee) else 0
            F = segment(forward(heads[fixed], X[fixed]), seg_cfg)
            Ft = relax(F, k_fixed, seg_cfg.threshold)
            head, opt, Xt = heads[trainee], opts[trainee], X[trainee]
            for _ in range(align_cfg.alternation_period):
                if epochs_done >= align_cfg.max_epochs:
                    break
                snapshot = head.copy()
                total = 0.0
                try:
                    for idx in batches(n, batch_size, rng):
                        cache = forward_cached(head, Xt[idx])
                        o = cache.output.reshape(-1, S, k)
                        if align_cfg.negatives == "fixed":
                            neg_raw, neg_t = F[idx], Ft[idx]
                        else:
                            neg_raw, neg_t = o, relax(o, k_trainee, seg_cfg.threshold)
                        target = adjust_objectives(F[idx], Ft[idx], neg_raw, neg_t, align_cfg.gamma)
                        loss, grad = alignment_loss(o, target)
                        if not np.isfinite(loss):
                            raise NonFiniteError(f"non-finite alignment loss in cycle {cycle}")
                        adamw_step(head, backward(head, Xt[idx], grad.reshape(len(idx), -1), cache), opt)
                        total += loss
                except NonFiniteError as e:
                    heads[trainee] = snapshot
                    result.code_head, result.query_head = heads["code"], heads["query"]
                    result.error = str(e)
                    log.error("%s; keeping last good heads", e)
                    return result
                epochs_done += 1
                rate = val_rate()
                result.log.append(CycleRecord(cycle, trainee, epochs_done, total / n, rate))
                log.info("align cycle %d train %s epoch %d loss %.4f val rate %.4f", cycle, trainee, epochs_done, total / n, rate)

        rate = result.log[-1].val_positive_collision_rate if result.log else prev_rate
        if rate - prev_rate < align_cfg.min_improvement:
            result.converged = True
            break
        prev_rate = rate

    result.code_head, result.query_head = heads["code"], heads["query"]
    return result
