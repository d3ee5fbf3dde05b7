"""Trainable building blocks: BiLSTM, span attention, scoring stack, Adam.

Parameters live in an ordered name -> leaf-tensor table so checkpoints,
gradient dictionaries, and optimizer state all key off the same names.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor

CHECKPOINT_MAGIC = b"TCP1"
CHECKPOINT_VERSION = 1
_U32 = struct.Struct("<I")

#: Bucket lower bounds for mention widths and mention-ordinal distances:
#: 1, 2, 3, 4, 5-7, 8-15, 16-31, 32-63, 64+.
BUCKET_BOUNDS = (1, 2, 3, 4, 5, 8, 16, 32, 64)
N_BUCKETS = len(BUCKET_BOUNDS)


def bucket_index(value: int) -> int:
    """Bucket for a positive width/distance; values below 1 clamp to 1."""
    value = max(value, 1)
    idx = 0
    for i, bound in enumerate(BUCKET_BOUNDS):
        if value >= bound:
            idx = i
    return idx


@dataclass(frozen=True)
class Config:
    """Model and training settings; defaults follow the reference setup."""

    bilstm_hidden: int = 200
    type_embedding_dim: int = 20
    feature_embedding_dim: int = 20
    fc_sizes: tuple[int, ...] = (150, 150)
    dropout: float = 0.2
    max_antecedents: int = 50
    learning_rate: float = 1e-3
    epochs: int = 20
    seed: int = 0
    keep_singletons: bool = True

    def __post_init__(self):
        dims = (self.bilstm_hidden, self.type_embedding_dim, self.feature_embedding_dim,
                *self.fc_sizes, self.max_antecedents, self.epochs)
        if any(d <= 0 for d in dims):
            raise ValueError("all dimensions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")

    def updated(self, **kwargs) -> "Config":
        return replace(self, **kwargs)


class Parameters:
    """Ordered table of named leaf tensors (the trainable state)."""

    def __init__(self, tensors: dict[str, Tensor] | None = None):
        self._tensors: dict[str, Tensor] = dict(tensors or {})

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter {name!r}")
        leaf = Tensor(np.asarray(data), requires_grad=True, name=name)
        self._tensors[name] = leaf
        return leaf

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._tensors.items())

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._tensors.items()}

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def astype(self, dtype) -> "Parameters":
        out = Parameters()
        for name, t in self._tensors.items():
            out.add(name, t.data.astype(dtype))
        return out

    def copy(self) -> "Parameters":
        out = Parameters()
        for name, t in self._tensors.items():
            out.add(name, t.data.copy())
        return out

    # -- checkpoint io ------------------------------------------------------

    def save(self, path: str) -> None:
        """Versioned binary named-tensor table, little-endian float32."""
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(_U32.pack(CHECKPOINT_VERSION))
            fh.write(_U32.pack(len(self._tensors)))
            for name, t in self._tensors.items():
                encoded = name.encode("utf-8")
                fh.write(_U32.pack(len(encoded)))
                fh.write(encoded)
                fh.write(_U32.pack(t.data.ndim))
                for size in t.data.shape:
                    fh.write(_U32.pack(size))
                fh.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path: str) -> "Parameters":
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:4] != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a parameter checkpoint")
        (version,) = _U32.unpack_from(blob, 4)
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (count,) = _U32.unpack_from(blob, 8)
        offset = 12
        out = cls()
        for _ in range(count):
            (name_len,) = _U32.unpack_from(blob, offset)
            offset += 4
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = _U32.unpack_from(blob, offset)
            offset += 4
            shape = []
            for _ in range(ndim):
                (size,) = _U32.unpack_from(blob, offset)
                shape.append(size)
                offset += 4
            n = int(np.prod(shape, dtype=np.int64)) if shape else 1
            data = np.frombuffer(blob, dtype="<f4", count=n, offset=offset).reshape(shape)
            offset += n * 4
            out.add(name, data.copy())
        return out


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], dtype, scale: float = 0.1) -> np.ndarray:
    return rng.uniform(-scale, scale, shape).astype(dtype)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


def add_dense(params: Parameters, rng: np.random.Generator, name: str,
              n_in: int, n_out: int, dtype=np.float32) -> None:
    params.add(f"{name}.w", uniform_init(rng, (n_in, n_out), dtype))
    params.add(f"{name}.b", uniform_init(rng, (n_out,), dtype))


def dense(params: Parameters, name: str, x: Tensor) -> Tensor:
    return ag.add(ag.matmul(x, params[f"{name}.w"]), params[f"{name}.b"])


def add_bilstm(params: Parameters, rng: np.random.Generator, name: str,
               n_in: int, hidden: int, dtype=np.float32) -> None:
    for direction in ("fw", "bw"):
        params.add(f"{name}.{direction}.w_ih", uniform_init(rng, (n_in, 4 * hidden), dtype))
        params.add(f"{name}.{direction}.w_hh", uniform_init(rng, (hidden, 4 * hidden), dtype))
        params.add(f"{name}.{direction}.b", uniform_init(rng, (4 * hidden,), dtype))


def _lstm_direction(params: Parameters, prefix: str, x: Tensor, hidden: int,
                    reverse: bool) -> list[Tensor]:
    w_ih = params[f"{prefix}.w_ih"]
    w_hh = params[f"{prefix}.w_hh"]
    bias = params[f"{prefix}.b"]
    steps = range(x.shape[0] - 1, -1, -1) if reverse else range(x.shape[0])
    h = Tensor(np.zeros((1, hidden), dtype=x.dtype))
    c = Tensor(np.zeros((1, hidden), dtype=x.dtype))
    outputs: dict[int, Tensor] = {}
    for t in steps:
        x_t = ag.rows(x, t, t + 1)
        gates = ag.add(ag.add(ag.matmul(x_t, w_ih), ag.matmul(h, w_hh)), bias)
        i_gate = ag.sigmoid(ag.cols(gates, 0, hidden))
        f_gate = ag.sigmoid(ag.cols(gates, hidden, 2 * hidden))
        g_gate = ag.tanh(ag.cols(gates, 2 * hidden, 3 * hidden))
        o_gate = ag.sigmoid(ag.cols(gates, 3 * hidden, 4 * hidden))
        c = ag.add(ag.mul(f_gate, c), ag.mul(i_gate, g_gate))
        h = ag.mul(o_gate, ag.tanh(c))
        outputs[t] = h
    return [outputs[t] for t in range(x.shape[0])]


def bilstm(x: Tensor | np.ndarray, params: Parameters, hidden: int,
           name: str = "bilstm") -> Tensor:
    """Per-token states of a single-layer BiLSTM: (T, D) -> (T, 2*hidden).

    Row t concatenates the forward state at t with the backward state at t.
    """
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x))
    if x.data.ndim != 2:
        raise ValueError(f"bilstm expects a (T, D) matrix, got shape {x.shape}")
    if x.data.shape[1] != params[f"{name}.fw.w_ih"].shape[0]:
        raise ValueError(
            f"bilstm input width {x.data.shape[1]} does not match parameters "
            f"({params[f'{name}.fw.w_ih'].shape[0]})"
        )
    if x.shape[0] == 0:
        return Tensor(np.zeros((0, 2 * hidden), dtype=x.dtype))
    forward = _lstm_direction(params, f"{name}.fw", x, hidden, reverse=False)
    backward = _lstm_direction(params, f"{name}.bw", x, hidden, reverse=True)
    rows_out = [ag.concat([f, b], axis=1) for f, b in zip(forward, backward)]
    return ag.concat(rows_out, axis=0)


def add_span_attention(params: Parameters, rng: np.random.Generator,
                       n_in: int, dtype=np.float32, name: str = "attention") -> None:
    params.add(f"{name}.w", uniform_init(rng, (n_in, 1), dtype))
    params.add(f"{name}.b", uniform_init(rng, (1,), dtype))


def span_attention(states: Tensor, start: int, end: int, params: Parameters,
                   name: str = "attention") -> Tensor:
    """Softmax-weighted sum of state rows ``start..end`` (end inclusive)."""
    if end < start:
        raise ValueError(f"empty span [{start}, {end}]")
    span = ag.rows(states, start, end + 1)
    scores = ag.add(ag.matmul(span, params[f"{name}.w"]), params[f"{name}.b"])
    alpha = ag.softmax(scores, axis=0)
    return ag.matmul(ag.transpose(alpha), span)


def add_ffnn(params: Parameters, rng: np.random.Generator, name: str,
             n_in: int, hidden_sizes: Sequence[int], dtype=np.float32) -> None:
    prev = n_in
    for i, size in enumerate(hidden_sizes):
        add_dense(params, rng, f"{name}.fc{i}", prev, size, dtype)
        prev = size
    add_dense(params, rng, f"{name}.out", prev, 1, dtype)


def ffnn_score(x: Tensor, params: Parameters, name: str,
               n_hidden_layers: int, dropout: float = 0.0,
               rng: np.random.Generator | None = None) -> Tensor:
    """ReLU stack with a scalar linear head: (N, F) -> (N, 1).

    Dropout (when a generator is supplied) applies to the hidden activations
    only; inference passes omit the generator and are deterministic.
    """
    h = x
    for i in range(n_hidden_layers):
        h = ag.relu(dense(params, f"{name}.fc{i}", h))
        if dropout > 0.0 and rng is not None:
            h = ag.dropout(h, dropout, rng)
    return dense(params, f"{name}.out", h)


def add_embedding(params: Parameters, rng: np.random.Generator, name: str,
                  n_rows: int, dim: int, dtype=np.float32) -> None:
    params.add(name, uniform_init(rng, (n_rows, dim), dtype))


def embed(params: Parameters, name: str, indices) -> Tensor:
    return ag.take_rows(params[name], indices)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment estimates plus the shared step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: Parameters, grads: dict[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    """One in-place Adam update over every named gradient."""
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise ValueError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    for name, grad in grads.items():
        data = params[name].data
        grad = grad.astype(data.dtype, copy=False)
        m = state.m.setdefault(name, np.zeros_like(data))
        v = state.v.setdefault(name, np.zeros_like(data))
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state
