"""Reverse-mode differentiation over numpy arrays.

Graphs are built eagerly: each operation returns a Tensor that records
its parents and a closure mapping the output adjoint to parent-adjoint
contributions. ``backward`` walks a deterministic depth-first
topological order (parent tuples are traversed in construction order),
so repeated runs accumulate gradients in exactly the same sequence.

Complex tensors follow the real-composite convention: the adjoint of a
complex value z stores dL/d(Re z) + 1j * dL/d(Im z). Adjoints never
change kind: a real tensor always carries a real gradient.
"""
from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, metrics)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """Array node in the computation graph."""

    __slots__ = ("data", "grad", "op", "_parents", "_bwd")

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind not in "fc":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._bwd = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def item(self) -> float:
        return self.data.item()

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, dtype={self.dtype})"

    # Convenience arithmetic; the full op set lives in ops.py.
    def __add__(self, other):
        from . import ops
        return ops.add(self, _wrap(other))

    __radd__ = __add__

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, _wrap(other))

    def __rsub__(self, other):
        from . import ops
        return ops.sub(_wrap(other), self)


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def make_node(data, parents, bwd, op: str) -> Tensor:
    """Build an op result; records the graph only while grads are enabled."""
    out = Tensor(data)
    if _grad_enabled:
        out._parents = tuple(parents)
        out._bwd = bwd
        out.op = op
    return out


def accumulate(t: Tensor, g: np.ndarray) -> None:
    """Add an adjoint contribution to ``t``, matching its kind."""
    if t.data.dtype.kind == "f" and np.iscomplexobj(g):
        g = g.real
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum an adjoint over axes that numpy broadcasting introduced."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Propagate adjoints from a scalar loss to every reachable tensor."""
    if loss.size != 1:
        raise ValueError(
            f"backward() needs a scalar loss, got shape {loss.shape}"
        )
    order = _topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._bwd is not None:
            node._bwd(node.grad)
