"""Small reverse-mode automatic differentiation over numpy arrays.

Exactly the operation set the models here need: dense algebra, gate
nonlinearities, row gather/slice/concat for spans and embedding tables, and
stable softmax/log-sum-exp heads.  Graphs are built eagerly; calling
:func:`backward` on a scalar loss accumulates ``.grad`` on every leaf that
requires it.  The engine is dtype-agnostic: float32 for training, float64
when tests compare against finite differences.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class Tensor:
    """A node in the computation graph wrapping one ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: tuple["Tensor", ...] = (),
        backward_fn: Callable[[np.ndarray], None] | None = None,
        name: str | None = None,
    ):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward_fn = backward_fn
        self.name = name

    # -- introspection ------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    def item(self) -> float:
        return float(self.data.reshape(()))

    # -- autograd -----------------------------------------------------------

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every grad-requiring leaf."""
        if self.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -np.asarray(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return sum_all(self)


def tensor(data, requires_grad: bool = False, dtype=None, name: str | None = None) -> Tensor:
    arr = np.asarray(data, dtype=dtype)
    return Tensor(arr, requires_grad=requires_grad, name=name)


def _as_tensor(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# -- arithmetic -------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    out_data = a.data + b.data

    def backward_fn(grad):
        if a.requires_grad:
            a._accumulate(_unbroadcast(grad, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(grad, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward_fn=backward_fn)


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    out_data = a.data * b.data

    def backward_fn(grad):
        if a.requires_grad:
            a._accumulate(_unbroadcast(grad * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(grad * a.data, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward_fn=backward_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data @ b.data

    def backward_fn(grad):
        if a.requires_grad:
            a._accumulate(grad @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ grad)

    return Tensor(out_data, parents=(a, b), backward_fn=backward_fn)


def transpose(a: Tensor) -> Tensor:
    def backward_fn(grad):
        if a.requires_grad:
            a._accumulate(grad.T)

    return Tensor(a.data.T, parents=(a,), backward_fn=backward_fn)


# -- nonlinearities ---------------------------------------------------------


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward_fn(grad):
        if a.requires_grad:
            a._accumulate(grad * (1.0 - out_data * out_data))

    return Tensor(out_data, parents=(a,), backward_fn=backward_fn)


def sigmoid(a: Tensor) -> Tensor:
    # stable logistic: exp of a non-positive argument on both branches
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward_fn(grad):
        if a.requires_grad:
            a._accumulate(grad * out_data * (1.0 - out_data))

    return Tensor(out_data, parents=(a,), backward_fn=backward_fn)


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0.0)

    def backward_fn(grad):
        if a.requires_grad:
            a._accumulate(grad * (a.data > 0))

    return Tensor(out_data, parents=(a,), backward_fn=backward_fn)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward_fn(grad):
        if a.requires_grad:
            a._accumulate(grad * out_data)

    return Tensor(out_data, parents=(a,), backward_fn=backward_fn)


def log(a: Tensor) -> Tensor:
    def backward_fn(grad):
        if a.requires_grad:
            a._accumulate(grad / a.data)

    return Tensor(np.log(a.data), parents=(a,), backward_fn=backward_fn)


# -- shape ops --------------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    datas = [t.data for t in tensors]
    out_data = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(grad):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * grad.ndim
                index[axis] = slice(lo, hi)
                t._accumulate(grad[tuple(index)])

    return Tensor(out_data, parents=tuple(tensors), backward_fn=backward_fn)


def rows(a: Tensor, start: int, stop: int) -> Tensor:
    def backward_fn(grad):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[start:stop] = grad
            a._accumulate(full)

    return Tensor(a.data[start:stop], parents=(a,), backward_fn=backward_fn)


def cols(a: Tensor, start: int, stop: int) -> Tensor:
    def backward_fn(grad):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[:, start:stop] = grad
            a._accumulate(full)

    return Tensor(a.data[:, start:stop], parents=(a,), backward_fn=backward_fn)


def take_rows(a: Tensor, indices) -> Tensor:
    """Gather rows by index (embedding lookup); duplicate indices accumulate."""
    idx = np.asarray(indices, dtype=np.intp)

    def backward_fn(grad):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, grad)
            a._accumulate(full)

    return Tensor(a.data[idx], parents=(a,), backward_fn=backward_fn)


# -- reductions and heads ---------------------------------------------------


def sum_all(a: Tensor) -> Tensor:
    def backward_fn(grad):
        if a.requires_grad:
            a._accumulate(np.full_like(a.data, float(grad)))

    return Tensor(np.asarray(a.data.sum(), dtype=a.dtype), parents=(a,), backward_fn=backward_fn)


def mean_rows(a: Tensor) -> Tensor:
    """Arithmetic mean over rows: (n, d) -> (1, d)."""
    n = a.data.shape[0]
    if n == 0:
        raise ValueError("mean over zero rows")
    out_data = a.data.mean(axis=0, keepdims=True)

    def backward_fn(grad):
        if a.requires_grad:
            a._accumulate(np.repeat(grad, n, axis=0) / n)

    return Tensor(out_data, parents=(a,), backward_fn=backward_fn)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(grad):
        if a.requires_grad:
            inner = (grad * out_data).sum(axis=axis, keepdims=True)
            a._accumulate(out_data * (grad - inner))

    return Tensor(out_data, parents=(a,), backward_fn=backward_fn)


def logsumexp(a: Tensor) -> Tensor:
    """log sum exp over all elements, as a scalar tensor."""
    m = a.data.max()
    out_data = np.asarray(m + np.log(np.exp(a.data - m).sum()), dtype=a.dtype)

    def backward_fn(grad):
        if a.requires_grad:
            a._accumulate(float(grad) * np.exp(a.data - out_data))

    return Tensor(out_data, parents=(a,), backward_fn=backward_fn)


def logsumexp_rows(a: Tensor) -> Tensor:
    """Row-wise log sum exp: (n, c) -> (n, 1)."""
    m = a.data.max(axis=1, keepdims=True)
    out_data = m + np.log(np.exp(a.data - m).sum(axis=1, keepdims=True))

    def backward_fn(grad):
        if a.requires_grad:
            a._accumulate(grad * np.exp(a.data - out_data))

    return Tensor(out_data, parents=(a,), backward_fn=backward_fn)


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; call only on the training path."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate {p} outside [0, 1)")
    if p == 0.0:
        return a
    mask = (rng.random(a.data.shape) >= p).astype(a.dtype) / (1.0 - p)
    out_data = a.data * mask

    def backward_fn(grad):
        if a.requires_grad:
            a._accumulate(grad * mask)

    return Tensor(out_data, parents=(a,), backward_fn=backward_fn)


def backward(loss: Tensor) -> None:
    """Run reverse-mode accumulation from a scalar loss node."""
    loss.backward()


def gradients(loss: Tensor, leaves: Iterable[tuple[str, Tensor]]) -> dict[str, np.ndarray]:
    """Gradients of ``loss`` for named leaves; zeros for unused leaves."""
    backward(loss)
    out = {}
    for name, leaf in leaves:
        out[name] = np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad
    return out
