"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a contiguous float32/float64 numpy array plus an
optional gradient buffer. Operations (see :mod:`motility3d.ops`) record a
backward closure and parent links while gradient recording is enabled;
``backward`` replays those closures in reverse topological order.

Graphs are one-shot: running backward frees each node's saved context, and a
second backward through the same nodes raises :class:`GraphError`. Gradients
on leaf tensors accumulate across backward calls until ``zero_grads``.
"""

from contextlib import contextmanager

import numpy as np

from .errors import GeometryError, GraphError
from .runtime import check_finite

DEFAULT_DTYPE = np.float32
_FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True


def is_grad_enabled():
    return _grad_enabled


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / numeric probes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """N-dimensional (up to 5 axes) dense float tensor, canonical video
    layout (N, C, T, H, W)."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        if arr.ndim > 5:
            raise GeometryError(f"tensors support at most 5 axes, got {arr.ndim}")
        self.data = np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = None
        self._backward = None
        self._consumed = False

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        if self.data.size != 1:
            raise GeometryError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def is_leaf(self):
        return self._parents is None and not self._consumed

    def __repr__(self):
        flags = []
        if self.requires_grad:
            flags.append("requires_grad")
        if self._parents is not None:
            flags.append("node")
        tag = ", ".join([f"shape={self.shape}", f"dtype={self.data.dtype.name}"] + flags)
        return f"Tensor({tag})"

    # -- gradients -----------------------------------------------------

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0)

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def detach(self):
        """A leaf view of the same values, cut from the graph."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out._parents = None
        out._backward = None
        out._consumed = False
        return out

    def backward(self):
        backward(self)


def from_op(data, parents, backward_fn, context):
    """Wrap an op result, validating finiteness and recording the graph node.

    ``backward_fn`` is invoked with the output gradient array and must
    accumulate into the parents; it is recorded only while gradient mode is
    on and some parent requires a gradient.
    """
    check_finite(data, context)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._consumed = False
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = None
        out._backward = None
    return out


def backward(loss):
    """Populate gradients of every tensor reachable from the scalar ``loss``."""
    if loss.size != 1:
        raise GraphError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("graph already consumed by a previous backward call")

    # Iterative post-order over parent links.
    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        if node._consumed:
            raise GraphError("graph already consumed by a previous backward call")
        stack.append((node, True))
        if node._parents is not None:
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        fn = node._backward
        if fn is not None and node.grad is not None:
            fn(node.grad)
        if node._parents is not None:
            # Free saved context; keep gradients only on leaves.
            node._backward = None
            node._parents = None
            node._consumed = True
            node.grad = None


def zero_grads(tensors):
    for t in tensors:
        t.zero_grad()


def as_tensor(value, dtype=None):
    return value if isinstance(value, Tensor) else Tensor(value, dtype=dtype)
