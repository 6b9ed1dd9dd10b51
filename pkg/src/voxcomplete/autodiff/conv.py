"""NumPy kernels for 3D convolution, its transpose and its kernel gradient.

All three go through one im2col layout so the matrix products hit BLAS.
Shapes: inputs (B, C, X, Y, Z), kernels (O, C, k, k, k).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def check_conv_args(x_shape, w_shape, stride: int, pad: int) -> None:
    if len(x_shape) != 5 or len(w_shape) != 5:
        raise ValueError(f"conv3d expects 5-d input and kernel, got {x_shape} and {w_shape}")
    if x_shape[1] != w_shape[1]:
        raise ValueError(f"conv3d channel mismatch: input has {x_shape[1]}, kernel expects {w_shape[1]}")
    k = w_shape[2]
    if w_shape[3] != k or w_shape[4] != k:
        raise ValueError(f"conv3d kernel must be cubic, got {w_shape[2:]}")
    if stride < 1 or pad < 0:
        raise ValueError(f"invalid stride/pad: {stride}/{pad}")
    for n in x_shape[2:]:
        if n + 2 * pad < k:
            raise ValueError(f"kernel {k} larger than padded input {n + 2 * pad}")


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad), (pad, pad)))


def im2col(x: np.ndarray, k: int, stride: int, pad: int) -> tuple[np.ndarray, tuple[int, int, int]]:
    """Rows are output positions (b, ox, oy, oz); columns are (c, i, j, l)."""
    b, c = x.shape[:2]
    osz = tuple(out_size(n, k, stride, pad) for n in x.shape[2:])
    win = sliding_window_view(_pad(x, pad), (k, k, k), axis=(2, 3, 4))
    win = win[:, :, ::stride, ::stride, ::stride][:, :, :osz[0], :osz[1], :osz[2]]
    cols = win.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(b * osz[0] * osz[1] * osz[2], c * k ** 3)
    return cols, osz


def conv_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    o, _, k = w.shape[:3]
    cols, osz = im2col(x, k, stride, pad)
    out = cols @ w.reshape(o, -1).T
    return np.ascontiguousarray(out.reshape(x.shape[0], *osz, o).transpose(0, 4, 1, 2, 3))


def conv_transpose_forward(y: np.ndarray, w: np.ndarray, stride: int, pad: int,
                           output_size: tuple[int, int, int]) -> np.ndarray:
    b, o = y.shape[:2]
    c, k = w.shape[1], w.shape[2]
    isz = y.shape[2:]
    rows = y.transpose(0, 2, 3, 4, 1).reshape(-1, o)
    cols = rows @ w.reshape(o, -1)
    # (b, ix, iy, iz, c, i, j, l) -> (i, j, l, b, c, ix, iy, iz)
    cols = cols.reshape(b, *isz, c, k, k, k).transpose(5, 6, 7, 0, 4, 1, 2, 3)
    full = [max(n + 2 * pad, (s - 1) * stride + k) for n, s in zip(output_size, isz)]
    out = np.zeros((b, c, *full), dtype=np.result_type(y.dtype, w.dtype))
    ex, ey, ez = ((s - 1) * stride + 1 for s in isz)
    for i in range(k):
        for j in range(k):
            for l in range(k):
                out[:, :, i:i + ex:stride, j:j + ey:stride, l:l + ez:stride] += cols[i, j, l]
    sx, sy, sz = output_size
    return np.ascontiguousarray(out[:, :, pad:pad + sx, pad:pad + sy, pad:pad + sz])


def conv_weight_grad(x: np.ndarray, gy: np.ndarray, stride: int, pad: int, k: int) -> np.ndarray:
    o = gy.shape[1]
    cols, osz = im2col(x, k, stride, pad)
    if tuple(osz) != tuple(gy.shape[2:]):
        raise ValueError(f"gradient map {gy.shape[2:]} does not match conv output {osz}")
    rows = gy.transpose(0, 2, 3, 4, 1).reshape(-1, o)
    return (rows.T @ cols).reshape(o, x.shape[1], k, k, k)
