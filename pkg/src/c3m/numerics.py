"""Dense float64 primitives for forward-only inference.

Tensors are plain ``numpy.ndarray`` objects of dtype float64.  Every reduction
that feeds the bitstream (matmul, row sums) accumulates in a fixed loop order
using only element-wise IEEE operations, so results do not depend on BLAS
blocking, thread count or memory alignment.
"""

from dataclasses import dataclass
import math

import numpy as np

LN_EPS = 1e-6
_GELU_C = math.sqrt(2.0 / math.pi)


class DimensionError(ValueError):
    """Raised when tensor shapes are inconsistent with an operation."""


@dataclass(frozen=True)
class ConvSpec:
    kernel_h: int
    kernel_w: int
    stride: int
    in_channels: int
    out_channels: int
    padding: int = 0
    output_padding: int = 0

    def __post_init__(self):
        for name in ("kernel_h", "kernel_w", "stride", "in_channels", "out_channels"):
            if getattr(self, name) < 1:
                raise DimensionError(f"{name} must be positive")
        if self.padding < 0 or self.output_padding < 0:
            raise DimensionError("padding must be non-negative")

    def conv_out(self, h, w):
        ho = (h + 2 * self.padding - self.kernel_h) // self.stride + 1
        wo = (w + 2 * self.padding - self.kernel_w) // self.stride + 1
        if ho < 1 or wo < 1 or h + 2 * self.padding < self.kernel_h or w + 2 * self.padding < self.kernel_w:
            raise DimensionError(f"input {h}x{w} too small for {self}")
        return ho, wo

    def transpose_out(self, h, w):
        ho = (h - 1) * self.stride + self.kernel_h - 2 * self.padding + self.output_padding
        wo = (w - 1) * self.stride + self.kernel_w - 2 * self.padding + self.output_padding
        if ho < 1 or wo < 1:
            raise DimensionError(f"input {h}x{w} too small for {self}")
        return ho, wo


def as_tensor(x):
    return np.asarray(x, dtype=np.float64)


def matmul(a, b):
    """Batched matrix product ``a @ b`` with a fixed accumulation order.

    The inner dimension is accumulated sequentially k = 0, 1, ..., K-1 with
    separate multiply and add steps, so the result is bit-reproducible.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul needs at least 2-d operands")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"inner dimensions differ: {a.shape} x {b.shape}")
    k_dim = a.shape[-1]
    if k_dim == 0:
        shape = np.broadcast_shapes(a.shape[:-2], b.shape[:-2]) + (a.shape[-2], b.shape[-1])
        return np.zeros(shape)
    out = a[..., :, 0:1] * b[..., 0:1, :]
    tmp = np.empty_like(out)
    for k in range(1, k_dim):
        np.multiply(a[..., :, k:k + 1], b[..., k:k + 1, :], out=tmp)
        out += tmp
    return out


def rowsum(x):
    """Sum over the last axis in index order."""
    x = as_tensor(x)
    if x.shape[-1] == 0:
        return np.zeros(x.shape[:-1])
    out = x[..., 0].copy()
    for j in range(1, x.shape[-1]):
        out += x[..., j]
    return out


def linear(x, w, b=None):
    """``x @ w + b`` for row-vector tokens; ``w`` has shape (in, out)."""
    out = matmul(x, w)
    if b is not None:
        out += b
    return out


def _im2col(x, kh, kw, stride, padding):
    c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding))) if padding else x
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # (C, Ho, Wo, kh, kw)
    ho, wo = win.shape[1], win.shape[2]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(c * kh * kw, ho * wo)
    return cols, ho, wo


def conv2d(x, w, bias, spec):
    """Cross-correlation of ``x`` (C_in, H, W) with ``w`` (C_out, C_in, kh, kw)."""
    x = as_tensor(x)
    w = as_tensor(w)
    if x.ndim != 3 or x.shape[0] != spec.in_channels:
        raise DimensionError(f"input shape {x.shape} does not match {spec}")
    if w.shape != (spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w):
        raise DimensionError(f"weight shape {w.shape} does not match {spec}")
    ho, wo = spec.conv_out(x.shape[1], x.shape[2])
    cols, _, _ = _im2col(x, spec.kernel_h, spec.kernel_w, spec.stride, spec.padding)
    out = matmul(w.reshape(spec.out_channels, -1), cols)
    if bias is not None:
        out += as_tensor(bias)[:, None]
    return out.reshape(spec.out_channels, ho, wo)


def conv_transpose2d(x, w, bias, spec):
    """Transposed convolution; ``w`` has shape (C_in, C_out, kh, kw).

    Output extent is ``(in - 1) * stride + kernel - 2 * padding + output_padding``.
    """
    x = as_tensor(x)
    w = as_tensor(w)
    if x.ndim != 3 or x.shape[0] != spec.in_channels:
        raise DimensionError(f"input shape {x.shape} does not match {spec}")
    if w.shape != (spec.in_channels, spec.out_channels, spec.kernel_h, spec.kernel_w):
        raise DimensionError(f"weight shape {w.shape} does not match {spec}")
    cin, h, wd = x.shape
    kh, kw, s, p = spec.kernel_h, spec.kernel_w, spec.stride, spec.padding
    ho, wo = spec.transpose_out(h, wd)
    # (C_out*kh*kw, C_in) @ (C_in, H*W)
    wt = w.reshape(cin, -1).T
    taps = matmul(wt, x.reshape(cin, h * wd)).reshape(spec.out_channels, kh, kw, h, wd)
    full_h = (h - 1) * s + kh + spec.output_padding
    full_w = (wd - 1) * s + kw + spec.output_padding
    full = np.zeros((spec.out_channels, full_h, full_w))
    for i in range(kh):
        for j in range(kw):
            full[:, i:i + (h - 1) * s + 1:s, j:j + (wd - 1) * s + 1:s] += taps[:, i, j]
    out = full[:, p:p + ho, p:p + wo].copy()
    if bias is not None:
        out += as_tensor(bias)[:, None, None]
    return out


def layer_norm(x, gain, shift, eps=LN_EPS):
    """Normalise each row of ``x`` (..., d) to zero mean and unit variance."""
    x = as_tensor(x)
    d = x.shape[-1]
    mean = rowsum(x) / d
    centered = x - mean[..., None]
    var = rowsum(centered * centered) / d
    out = centered / np.sqrt(var + eps)[..., None]
    return out * gain + shift


def softmax(x, axis=-1):
    x = as_tensor(x)
    moved = np.moveaxis(x, axis, -1)
    m = np.max(moved, axis=-1, keepdims=True)
    e = np.exp(moved - m)
    out = e / rowsum(e)[..., None]
    return np.moveaxis(out, -1, axis)


def relu(x):
    return np.maximum(as_tensor(x), 0.0)


def gelu(x):
    x = as_tensor(x)
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x * x * x)))


def attention(q, k, v, bias=None, key_mask=None):
    """Scaled dot-product attention ``softmax((QK^T + P) / sqrt(d)) V``.

    ``q`` is (..., Nq, d), ``k``/``v`` are (..., Nk, d).  ``bias`` broadcasts
    against the (..., Nq, Nk) logits.  ``key_mask`` is a boolean (Nk,) or
    (..., Nq, Nk) array; False entries are excluded from the softmax.
    Returns ``(output, weights)``.
    """
    d = q.shape[-1]
    logits = matmul(q, np.swapaxes(k, -1, -2))
    if bias is not None:
        logits = logits + bias
    logits = logits / math.sqrt(d)
    if key_mask is not None:
        logits = np.where(key_mask, logits, -np.inf)
    weights = softmax(logits, axis=-1)
    return matmul(weights, v), weights


def relative_bias(table, rows_q, cols_q, rows_k, cols_k, clip):
    """Gather a (2*clip+1, 2*clip+1) relative-position table for query/key coordinates."""
    dy = np.clip(np.subtract.outer(rows_q, rows_k), -clip, clip) + clip
    dx = np.clip(np.subtract.outer(cols_q, cols_k), -clip, clip) + clip
    return table[..., dy, dx]
