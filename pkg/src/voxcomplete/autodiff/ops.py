"""Differentiable primitives.

Every backward rule below is expressed with these same primitives, so all of
them support differentiating a gradient again, except ``batch_norm`` in
training mode whose fused rule is first order only.
"""

from __future__ import annotations

import builtins

import numpy as np

from . import conv as _conv
from .tensor import Tensor, as_tensor, make_node


def _const(x, like: Tensor) -> Tensor:
    return Tensor(np.asarray(x, dtype=like.dtype))


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if like is not None:
        return _const(x, like)
    return Tensor(np.asarray(x))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _wrap(b, a)
    b = _wrap(b)
    return _wrap(a, b), b


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


# ---------------------------------------------------------------- shape ops

def sum_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Sum ``x`` down to a broadcast-compatible ``shape``."""
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and x.shape[i + lead] != 1)
    data = x.data.sum(axis=axes, keepdims=True)
    if lead:
        data = data.reshape(data.shape[lead:])
    src_shape = x.shape
    return make_node(data, (x,), (lambda g: broadcast_to(g, src_shape),), "sum_to")


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    src_shape = x.shape
    data = np.broadcast_to(x.data, shape)
    return make_node(data, (x,), (lambda g: sum_to(g, src_shape),), "broadcast")


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    src_shape = x.shape
    data = x.data.reshape(shape)
    return make_node(data, (x,), (lambda g: reshape(g, src_shape),), "reshape")


def flatten(x: Tensor) -> Tensor:
    """Collapse every axis after the batch axis."""
    return reshape(x, (x.shape[0], -1))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return make_node(np.transpose(x.data, axes), (x,),
                     (lambda g: transpose(g, inverse),), "transpose")


def getitem(x: Tensor, idx) -> Tensor:
    src_shape = x.shape
    return make_node(x.data[idx], (x,),
                     (lambda g: scatter(g, src_shape, idx),), "getitem")


def scatter(x: Tensor, shape: tuple[int, ...], idx) -> Tensor:
    """Zeros of ``shape`` with ``x`` added at ``idx`` (adjoint of getitem)."""
    out = np.zeros(shape, dtype=x.dtype)
    np.add.at(out, idx, x.data)
    return make_node(out, (x,), (lambda g: getitem(g, idx),), "scatter")


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = list(tensors)
    axis = axis % tensors[0].ndim
    data = np.concatenate([t.data for t in tensors], axis=axis)
    vjps = []
    start = 0
    for t in tensors:
        stop = start + t.shape[axis]
        sl = (builtins.slice(None),) * axis + (builtins.slice(start, stop),)
        vjps.append(lambda g, sl=sl: getitem(g, sl))
        start = stop
    return make_node(data, tensors, vjps, "concat")


# ------------------------------------------------------------ arithmetic

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return make_node(a.data + b.data, (a, b),
                     (lambda g: sum_to(g, sa), lambda g: sum_to(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return make_node(a.data - b.data, (a, b),
                     (lambda g: sum_to(g, sa), lambda g: sum_to(neg(g), sb)), "sub")


def neg(a: Tensor) -> Tensor:
    return make_node(-a.data, (a,), (lambda g: neg(g),), "neg")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return make_node(a.data * b.data, (a, b),
                     (lambda g: sum_to(mul(g, b), sa), lambda g: sum_to(mul(g, a), sb)), "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    out_data = a.data / b.data

    def vjp_b(g):
        return sum_to(neg(div(mul(g, a), square(b))), sb)

    return make_node(out_data, (a, b), (lambda g: sum_to(div(g, b), sa), vjp_b), "div")


def abs(x: Tensor) -> Tensor:  # noqa: A001
    sign = np.sign(x.data)
    return make_node(np.abs(x.data), (x,), (lambda g: mul(g, _const(sign, x)),), "abs")


def square(x: Tensor) -> Tensor:
    return make_node(x.data * x.data, (x,), (lambda g: mul(g, mul(x, 2.0)),), "square")


def sqrt(x: Tensor) -> Tensor:
    out = make_node(np.sqrt(x.data), (x,), (None,), "sqrt")
    if out.requires_grad:
        out.vjps = (lambda g: div(g, mul(out, 2.0)),)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product."""
    a, b = _pair(a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return make_node(a.data @ b.data, (a, b),
                     (lambda g: matmul(g, transpose(b)), lambda g: matmul(transpose(a), g)),
                     "matmul")


# ------------------------------------------------------------- reductions

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _normalize_axes(axis, x.ndim)
    kept_shape = tuple(1 if i in axes else s for i, s in enumerate(x.shape))
    data = x.data.sum(axis=axes, keepdims=keepdims)
    src_shape = x.shape

    def vjp(g):
        if not keepdims:
            g = reshape(g, kept_shape)
        return broadcast_to(g, src_shape)

    return make_node(np.asarray(data), (x,), (vjp,), "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(sum(x, axis=axes, keepdims=keepdims), 1.0 / count)


def norm2(x: Tensor, axis=None) -> Tensor:
    """Euclidean norm over ``axis``; the gradient at a zero norm is taken as
    zero."""
    axes = _normalize_axes(axis, x.ndim)
    kept_shape = tuple(1 if i in axes else s for i, s in enumerate(x.shape))
    data = np.sqrt((x.data * x.data).sum(axis=axes))
    out = make_node(data, (x,), (None,), "norm2")
    if out.requires_grad:
        zero_mask = _const((data == 0).astype(x.dtype), x)

        def vjp(g):
            safe = add(out, zero_mask)
            scale = reshape(div(g, safe), kept_shape)
            return mul(x, scale)

        out.vjps = (vjp,)
    return out


def global_avg_pool3d(x: Tensor) -> Tensor:
    """(B, C, X, Y, Z) -> (B, C)."""
    return mean(x, axis=(2, 3, 4))


# ------------------------------------------------------------ activations

def relu(x: Tensor) -> Tensor:
    mask = (x.data > 0).astype(x.dtype)
    return make_node(x.data * mask, (x,), (lambda g: mul(g, _const(mask, x)),), "relu")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    factor = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return make_node(x.data * factor, (x,), (lambda g: mul(g, _const(factor, x)),), "leaky_relu")


def tanh(x: Tensor) -> Tensor:
    out = make_node(np.tanh(x.data), (x,), (None,), "tanh")
    if out.requires_grad:
        out.vjps = (lambda g: mul(g, sub(1.0, square(out))),)
    return out


def sigmoid(x: Tensor) -> Tensor:
    data = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    out = make_node(data.astype(x.dtype, copy=False), (x,), (None,), "sigmoid")
    if out.requires_grad:
        out.vjps = (lambda g: mul(g, mul(out, sub(1.0, out))),)
    return out


# --------------------------------------------------------------- layers

def embed(table: Tensor, index) -> Tensor:
    """Rows of ``table`` selected by integer ``index``."""
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise IndexError(f"embedding index out of range [0, {table.shape[0]})")
    return getitem(table, (index,))


def conv3d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation; x is (B, C, X, Y, Z), w is (O, C, k, k, k)."""
    _conv.check_conv_args(x.shape, w.shape, stride, pad)
    k = w.shape[2]
    in_size = x.shape[2:]
    data = _conv.conv_forward(x.data, w.data, stride, pad)
    return make_node(data, (x, w), (
        lambda g: conv_transpose3d(g, w, stride, pad, output_size=in_size),
        lambda g: conv3d_weight(x, g, stride, pad, k),
    ), "conv3d")


def conv_transpose3d(y: Tensor, w: Tensor, stride: int = 1, pad: int = 0,
                     output_size: tuple[int, int, int] | None = None) -> Tensor:
    """Adjoint of :func:`conv3d` with the same kernel layout (O, C, k, k, k):
    maps an O-channel map to a C-channel map."""
    if y.ndim != 5 or w.ndim != 5 or y.shape[1] != w.shape[0]:
        raise ValueError(f"conv_transpose3d shape mismatch: {y.shape} with kernel {w.shape}")
    k = w.shape[2]
    if output_size is None:
        output_size = tuple((s - 1) * stride - 2 * pad + k for s in y.shape[2:])
    output_size = tuple(output_size)
    expected = tuple((s + 2 * pad - k) // stride + 1 for s in output_size)
    if stride < 1 or pad < 0 or expected != y.shape[2:]:
        raise ValueError(f"invalid transpose geometry: input {y.shape[2:]}, output {output_size}, "
                         f"k={k}, stride={stride}, pad={pad}")
    data = _conv.conv_transpose_forward(y.data, w.data, stride, pad, output_size)
    return make_node(data, (y, w), (
        lambda g: conv3d(g, w, stride, pad),
        lambda g: conv3d_weight(g, y, stride, pad, k),
    ), "conv_transpose3d")


def conv3d_weight(x: Tensor, gy: Tensor, stride: int, pad: int, k: int) -> Tensor:
    """Kernel gradient of :func:`conv3d`; differentiable in both inputs."""
    in_size = x.shape[2:]
    data = _conv.conv_weight_grad(x.data, gy.data, stride, pad, k)
    return make_node(data, (x, gy), (
        lambda g: conv_transpose3d(gy, g, stride, pad, output_size=in_size),
        lambda g: conv3d(x, g, stride, pad),
    ), "conv3d_weight")


def batch_norm_train(x: Tensor, eps: float) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Normalize per channel over batch and spatial axes.

    Returns the normalized tensor plus the batch mean and biased variance.
    The backward rule is fused and first order only.
    """
    axes = (0,) + tuple(range(2, x.ndim))
    mu = x.data.mean(axis=axes, keepdims=True)
    var = x.data.var(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    n = x.data.size // x.shape[1]

    def vjp(g):
        gd = g.data
        gsum = gd.sum(axis=axes, keepdims=True)
        gxsum = (gd * xhat).sum(axis=axes, keepdims=True)
        return Tensor((inv_std / n) * (n * gd - gsum - xhat * gxsum))

    out = make_node(xhat.astype(x.dtype, copy=False), (x,), (vjp,), "batch_norm",
                    second_order=False)
    return out, mu.reshape(-1), var.reshape(-1)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.99,
               eps: float = 1e-3, update_stats: bool = True) -> Tensor:
    """Batch normalization over every axis but the channel axis (1).

    In training mode batch statistics are used and, with ``update_stats``,
    the running buffers are updated in place as
    ``running = momentum * running + (1 - momentum) * batch``.
    Inference mode uses the running buffers.
    """
    shape = (1, x.shape[1]) + (1,) * (x.ndim - 2)
    if training:
        xhat, mu, var = batch_norm_train(x, eps)
        if update_stats:
            n = x.data.size // x.shape[1]
            unbiased = var * (n / (n - 1)) if n > 1 else var
            running_mean *= momentum
            running_mean += (1.0 - momentum) * mu
            running_var *= momentum
            running_var += (1.0 - momentum) * unbiased
    else:
        if running_mean is None or running_var is None:
            raise ValueError("batch_norm inference mode needs running statistics")
        inv_std = 1.0 / np.sqrt(np.asarray(running_var) + eps)
        xhat = mul(sub(x, _const(np.reshape(running_mean, shape), x)),
                   _const(np.reshape(inv_std, shape), x))
    return add(mul(xhat, reshape(gamma, shape)), reshape(beta, shape))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x (B, I) @ w (I, O) + b (O)."""
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


__all__ = [
    "add", "sub", "neg", "mul", "div", "abs", "square", "sqrt", "matmul", "transpose", "reshape",
    "flatten", "broadcast_to", "sum_to", "sum", "mean", "norm2", "getitem", "scatter", "concat",
    "relu", "leaky_relu", "tanh", "sigmoid", "embed", "conv3d", "conv_transpose3d",
    "conv3d_weight", "batch_norm", "batch_norm_train", "global_avg_pool3d", "linear",
    "as_tensor",
]
