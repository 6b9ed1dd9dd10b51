"""Tensor type, graph recording and reverse-mode differentiation.

The graph is implicit: every non-leaf tensor keeps references to its parents
and one vector-Jacobian closure per parent. Closures are written in terms of
other tensor ops, so running them with recording enabled yields a gradient
that is itself a differentiable node (this is how second-order terms such as a
gradient penalty are obtained).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_grad_enabled = True
_checked = False


class SecondOrderError(RuntimeError):
    """Raised when a differentiable gradient is requested through an op whose
    backward rule is first-order only."""


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def enable_grad(flag: bool = True):
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, flag
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


def set_checked(flag: bool) -> None:
    """Toggle NaN/Inf detection on every op output."""
    global _checked
    _checked = bool(flag)


def is_checked() -> bool:
    return _checked


class Tensor:
    """Dense n-d array that may take part in a recorded computation.

    Layout is row-major; 3D feature maps use (batch, channel, x, y, z).
    """

    __slots__ = ("data", "requires_grad", "parents", "vjps", "op", "second_order", "grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.parents: tuple[Tensor, ...] = ()
        self.vjps: tuple[Callable | None, ...] = ()
        self.op = "leaf"
        self.second_order = True
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar; implementations live in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, idx):
        from . import ops
        return ops.getitem(self, idx)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf that
        requires a gradient."""
        grads = backward(self)
        for leaf, g in grads.items():
            leaf.grad = g if leaf.grad is None else leaf.grad + g


def _raise_item(t: Tensor):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def make_node(data: np.ndarray, parents: Sequence[Tensor], vjps: Sequence[Callable | None],
              op: str, second_order: bool = True) -> Tensor:
    """Wrap an op result; records the edge only if recording is on and some
    parent needs a gradient."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    out.second_order = second_order
    if _checked and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by {op}")
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.vjps = tuple(f if p.requires_grad else None for p, f in zip(parents, vjps))
    else:
        out.requires_grad = False
        out.parents = ()
        out.vjps = ()
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(output: Tensor, wrt: Sequence[Tensor] | Tensor, create_graph: bool = False,
         grad_output: Tensor | np.ndarray | None = None) -> list[Tensor]:
    """Gradients of ``output`` with respect to each tensor in ``wrt``.

    ``output`` must be a scalar unless ``grad_output`` is supplied. With
    ``create_graph`` the returned tensors are graph nodes and can be
    differentiated again. Tensors not reachable from ``output`` get zeros.
    """
    single = isinstance(wrt, Tensor)
    targets = [wrt] if single else list(wrt)
    if grad_output is None:
        if output.size != 1:
            raise ValueError(f"grad needs a scalar output, got shape {output.shape}")
        seed = Tensor(np.ones_like(output.data))
    else:
        seed = as_tensor(grad_output, like=output)
        if seed.shape != output.shape:
            raise ValueError("grad_output shape does not match output")

    target_ids = {id(t) for t in targets}
    results: dict[int, Tensor] = {}

    if output.requires_grad:
        order = _topo_order(output)
        # keep only nodes from which some target is reachable
        relevant: set[int] = set()
        for node in order:
            if id(node) in target_ids or any(id(p) in relevant for p in node.parents):
                relevant.add(id(node))
        pending: dict[int, Tensor] = {id(output): seed}
        with enable_grad(create_graph):
            for node in reversed(order):
                g = pending.pop(id(node), None)
                if g is None or id(node) not in relevant:
                    continue
                if id(node) in target_ids:
                    results[id(node)] = g
                if not node.parents:
                    continue
                if create_graph and not node.second_order:
                    raise SecondOrderError(
                        f"op '{node.op}' has no second-order rule; "
                        "it cannot appear inside a differentiated gradient")
                for parent, vjp in zip(node.parents, node.vjps):
                    if vjp is None or id(parent) not in relevant:
                        continue
                    pg = vjp(g)
                    prev = pending.get(id(parent))
                    pending[id(parent)] = pg if prev is None else prev + pg
    elif id(output) in target_ids:
        results[id(output)] = seed

    out = []
    for t in targets:
        g = results.get(id(t))
        if g is None:
            g = Tensor(np.zeros_like(t.data))
        elif not create_graph:
            g = Tensor(g.data)
        out.append(g)
    return out


def backward(output: Tensor, leaves: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Reverse-mode gradient map from leaf tensor to ndarray.

    Without ``leaves`` every requires-grad leaf reachable from ``output`` is
    included.
    """
    if output.size != 1:
        raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
    if leaves is None:
        leaves = [n for n in _topo_order(output) if n.is_leaf and n.requires_grad] \
            if output.requires_grad else []
    leaves = list(leaves)
    grads = grad(output, leaves)
    return {leaf: g.data for leaf, g in zip(leaves, grads)}
