"""A small tape-based reverse-mode differentiation engine over numpy arrays.

Every op that touches a tensor requiring gradients appends its output to
the active :class:`Tape`. Because outputs are recorded in creation order,
walking the tape backwards visits nodes in reverse topological order.
"""

from __future__ import annotations

import numpy as np


class Tape:
    def __init__(self):
        self.nodes: list[Tensor] = []

    def record(self, node: "Tensor") -> None:
        self.nodes.append(node)

    def backward(self, loss: "Tensor") -> None:
        if loss.value.size != 1:
            raise ValueError("backward needs a scalar loss")
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)

    def clear(self) -> None:
        for node in self.nodes:
            node._backward = None
            node.grad = None
        self.nodes = []


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "tape", "_backward")

    def __init__(self, value, requires_grad: bool = False, tape: Tape | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.tape = tape
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        g = _unbroadcast(g, self.value.shape)
        # never mutate in place: the same array may be handed to several parents
        self.grad = g if self.grad is None else self.grad + g

    def zero_grad(self) -> None:
        self.grad = None

    def __add__(self, other):
        return add(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(value, parents, backward) -> Tensor:
    tape = next((p.tape for p in parents if p.tape is not None), None)
    needs = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor(value, requires_grad=needs, tape=tape)
    if needs:
        out._backward = backward
        tape.record(out)
    return out


def param(value, tape: Tape | None) -> Tensor:
    """A leaf that collects gradients on ``tape``."""
    return Tensor(value, requires_grad=tape is not None, tape=tape)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        a.accumulate(g)
        b.accumulate(g)

    return _result(a.value + b.value, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    def backward(g):
        a.accumulate(g * c)

    return _result(a.value * c, (a,), backward)


def _flat_matmul(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # (..., k) @ (k, m) as one 2-D BLAS call
    return (x.reshape(-1, x.shape[-1]) @ w).reshape(x.shape[:-1] + (w.shape[-1],))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    flat = b.value.ndim == 2 and a.value.ndim > 2

    def backward(g):
        if a.requires_grad:
            a.accumulate(_flat_matmul(g, b.value.T) if flat else g @ np.swapaxes(b.value, -1, -2))
        if b.requires_grad:
            if flat:
                a2 = a.value.reshape(-1, a.value.shape[-1])
                b.accumulate(a2.T @ g.reshape(-1, g.shape[-1]))
            else:
                b.accumulate(np.swapaxes(a.value, -1, -2) @ g)

    value = _flat_matmul(a.value, b.value) if flat else a.value @ b.value
    return _result(value, (a, b), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0

    def backward(g):
        a.accumulate(g * mask)

    return _result(a.value * mask, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.value.shape

    def backward(g):
        a.accumulate(g.reshape(old))

    return _result(a.value.reshape(shape), (a,), backward)


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)

    def backward(g):
        a.accumulate(np.transpose(g, inv))

    return _result(np.transpose(a.value, axes), (a,), backward)


def masked_softmax(a: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis; entries where ``mask`` is False get weight 0 exactly."""
    z = np.where(mask, a.value, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        a.accumulate(s * (g - (g * s).sum(axis=-1, keepdims=True)))

    return _result(s, (a,), backward)


def embed(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)

    def backward(g):
        if table.requires_grad:
            full = np.zeros_like(table.value)
            np.add.at(full, ids.reshape(-1), g.reshape(-1, table.value.shape[-1]))
            table.accumulate(full)

    return _result(table.value[ids], (table,), backward)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood (nats) of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    flat = logits.value.reshape(-1, logits.value.shape[-1])
    lab = labels.reshape(-1)
    z = flat - flat.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logz
    n = len(lab)
    loss = -logp[np.arange(n), lab].mean()

    def backward(g):
        p = np.exp(logp)
        p[np.arange(n), lab] -= 1.0
        logits.accumulate((g * p / n).reshape(logits.value.shape))

    return _result(np.asarray(loss), (logits,), backward)
