"""Three-layer hashing head with hand-derived gradients and an AdamW optimizer.

The head maps an embedding to a continuous hash vector in (-1, 1)^B:

    h1 = relu(x W0 + b0)
    h2 = relu(h1 W1 + b1)
    o  = tanh(h2 W2 + b2)

Weights are stored as (fan_in, fan_out) so a batch is a plain row-major
matmul. Training runs in float64; checkpoints are float32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_MAGIC = b"SDHM"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    """Input or parameter shapes do not agree."""


class NonFiniteError(FloatingPointError):
    """A gradient or loss contained NaN or inf."""


@dataclass
class HashHead:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        dims = [int(d) for d in self.layer_dims]
        if len(dims) < 2 or any(d <= 0 for d in dims):
            raise ShapeError(f"layer_dims must be positive integers, got {self.layer_dims}")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ShapeError("need one weight matrix and one bias vector per layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise ShapeError(
                    f"layer {i}: expected W{(dims[i], dims[i + 1])}, b{(dims[i + 1],)}, "
                    f"got W{w.shape}, b{b.shape}"
                )
        self.layer_dims = dims

    @classmethod
    def init(cls, layer_dims, seed=0) -> "HashHead":
        """Glorot-uniform weights and zero biases from a seeded generator."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            a = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(list(layer_dims), weights, biases)

    @property
    def n_bits(self) -> int:
        return self.layer_dims[-1]

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    def parameters(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def parameter_names(self) -> list[str]:
        n = len(self.weights)
        return [f"layers[{i}].weight" for i in range(n)] + [f"layers[{i}].bias" for i in range(n)]

    def copy(self) -> "HashHead":
        return HashHead(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def astype_f32(self) -> "HashHead":
        """The head as it would be after a checkpoint round trip."""
        return HashHead(
            list(self.layer_dims),
            [w.astype(np.float32).astype(np.float64) for w in self.weights],
            [b.astype(np.float32).astype(np.float64) for b in self.biases],
        )

    def equals(self, other: "HashHead") -> bool:
        return self.layer_dims == other.layer_dims and all(
            np.array_equal(p, q) for p, q in zip(self.parameters(), other.parameters())
        )

    def to_bytes(self) -> bytes:
        parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(self.weights))]
        for w in self.weights:
            parts.append(struct.pack("<II", *w.shape))
        for w in self.weights:
            parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        for b in self.biases:
            parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "HashHead":
        from .storage import FormatError, Reader

        r = Reader(data)
        r.expect_magic(CHECKPOINT_MAGIC)
        r.expect_version(CHECKPOINT_VERSION)
        n_layers = r.u32()
        if n_layers == 0:
            raise FormatError("checkpoint declares zero layers", r.pos - 4)
        shapes = [(r.u32(), r.u32()) for _ in range(n_layers)]
        for i in range(1, n_layers):
            if shapes[i][0] != shapes[i - 1][1]:
                raise FormatError(f"layer {i} input width does not match layer {i - 1} output", 12)
        weights = [r.f32_array(rows * cols).reshape(rows, cols) for rows, cols in shapes]
        biases = [r.f32_array(cols) for _, cols in shapes]
        r.expect_end()
        dims = [shapes[0][0]] + [cols for _, cols in shapes]
        return cls(dims, [w.astype(np.float64) for w in weights], [b.astype(np.float64) for b in biases])


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to each layer
    pre: list[np.ndarray]  # pre-activation of each layer
    output: np.ndarray


def _as_batch(head: HashHead, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != head.input_dim:
        raise ShapeError(f"expected input of width {head.input_dim}, got shape {np.shape(x)}")
    return x, single


def forward_cached(head: HashHead, x) -> ForwardCache:
    x, _ = _as_batch(head, x)
    inputs, pre = [], []
    a = x
    last = len(head.weights) - 1
    for i, (w, b) in enumerate(zip(head.weights, head.biases)):
        inputs.append(a)
        z = a @ w + b
        pre.append(z)
        a = np.tanh(z) if i == last else np.maximum(z, 0.0)
    return ForwardCache(inputs, pre, a)


def forward(head: HashHead, x) -> np.ndarray:
    """Continuous hash outputs for one embedding (1-d) or a batch (2-d)."""
    x, single = _as_batch(head, x)
    out = forward_cached(head, x).output
    return out[0] if single else out


@dataclass
class GradientSet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]


def backward(head: HashHead, x, upstream, cache: ForwardCache | None = None) -> GradientSet:
    """Parameter gradients of a scalar loss given dloss/do.

    Batched inputs accumulate over rows; `upstream` must match the output shape.
    """
    x, single = _as_batch(head, x)
    g = np.asarray(upstream, dtype=np.float64)
    if single:
        g = g[None, :] if g.ndim == 1 else g
    if g.shape != (x.shape[0], head.n_bits):
        raise ShapeError(f"upstream gradient shape {np.shape(upstream)} does not match output")
    if cache is None:
        cache = forward_cached(head, x)

    n = len(head.weights)
    gw: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    delta = g * (1.0 - cache.output**2)
    for i in range(n - 1, -1, -1):
        gw[i] = cache.inputs[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ head.weights[i].T) * (cache.pre[i - 1] > 0)
    return GradientSet(gw, gb)


@dataclass
class OptimizerState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.01
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_head(cls, head: HashHead, **hyper) -> "OptimizerState":
        params = head.parameters()
        return cls(
            **hyper,
            first_moment=[np.zeros_like(p) for p in params],
            second_moment=[np.zeros_like(p) for p in params],
        )


def adamw_step(head: HashHead, grads: GradientSet, state: OptimizerState) -> tuple[HashHead, OptimizerState]:
    """Decoupled-weight-decay Adam update, applied in place and returned.

    Raises NonFiniteError naming the offending parameter before anything is modified.
    """
    params = head.parameters()
    garrs = grads.arrays()
    if len(garrs) != len(params):
        raise ShapeError("gradient set does not match head")
    for name, p, g in zip(head.parameter_names(), params, garrs):
        if g.shape != p.shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in {name}")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]

    state.step_count += 1
    t = state.step_count
    lr, b1, b2 = state.learning_rate, state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for p, g, m, v in zip(params, garrs, state.first_moment, state.second_moment):
        if state.weight_decay:
            p *= 1.0 - lr * state.weight_decay
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return head, state
