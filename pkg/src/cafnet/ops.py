"""
Differentiable operations on NCHW tensors.

Convolutions use im2col + a single GEMM; the column matrix is kept for the
backward pass only when a graph is being recorded.
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ConfigurationError, DimensionError, InvalidInputError
from .tensor import Tensor, grad_enabled

Pair = tuple[int, int]


def _pair(v) -> Pair:
    if isinstance(v, int):
        return (v, v)
    a, b = v
    return (int(a), int(b))


def _require_4d(t: Tensor, what: str) -> None:
    if t.ndim != 4:
        raise DimensionError(f"{what} must be 4-D (n, c, h, w), got shape {t.shape}")


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """Read-only (n, c, oh, ow, kh, kw) view of sliding windows."""
    n, c = xp.shape[:2]
    sn, sc, sh, sw = xp.strides
    return as_strided(xp, shape=(n, c, oh, ow, kh, kw),
                      strides=(sn, sc, sh * stride, sw * stride, sh, sw), writeable=False)


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
           pad_begin=0, pad_end=0) -> Tensor:
    """Cross-correlation with zero padding given separately before/after each axis.

    ``weight`` has shape ``(c_out, c_in, kh, kw)``. The padded extent minus the
    kernel size must be an exact multiple of ``stride``.
    """
    _require_4d(x, "conv2d input")
    _require_4d(weight, "conv2d weight")
    n, c, h, w = x.shape
    co, ci, kh, kw = weight.shape
    if c != ci:
        raise DimensionError(f"conv2d: input has {c} channels, weight expects {ci}")
    if bias is not None and bias.shape != (co,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({co},)")
    if stride < 1:
        raise ConfigurationError(f"conv2d: stride must be >= 1, got {stride}")
    pb, pe = _pair(pad_begin), _pair(pad_end)
    span_h, span_w = h + pb[0] + pe[0] - kh, w + pb[1] + pe[1] - kw
    if span_h < 0 or span_w < 0:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input")
    if span_h % stride or span_w % stride:
        raise ConfigurationError(
            f"conv2d: padded size ({h + pb[0] + pe[0]}, {w + pb[1] + pe[1]}) minus kernel "
            f"({kh}, {kw}) is not divisible by stride {stride}")
    oh, ow = span_h // stride + 1, span_w // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (pb[0], pe[0]), (pb[1], pe[1])))
    # channel-major columns: (c*kh*kw, n*oh*ow)
    cols = _windows(xp, kh, kw, stride, oh, ow).transpose(1, 4, 5, 0, 2, 3).reshape(c * kh * kw, -1)
    w_mat = weight.data.reshape(co, -1)
    out = w_mat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(co, n, oh, ow).transpose(1, 0, 2, 3)

    def backward(g):
        g_mat = g.transpose(1, 0, 2, 3).reshape(co, -1)
        gw = (g_mat @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (w_mat.T @ g_mat).reshape(c, kh, kw, n, oh, ow)
            gxp = np.zeros((c, n) + xp.shape[2:], dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += dcols[:, i, j]
            gx = gxp[:, :, pb[0]:pb[0] + h, pb[1]:pb[1] + w].transpose(1, 0, 2, 3)
        return gx, gw, gb

    if not grad_enabled():
        cols = None
    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, backward, "conv2d")


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
                     up_rate: int = 2, pad: int = 0) -> Tensor:
    """Transposed convolution (the adjoint of :func:`conv2d` in its input).

    ``weight`` has shape ``(c_in, c_out, kh, kw)``. Each input sample scatters
    ``weight`` into a ``(h-1)*up_rate + kh`` canvas, which is then cropped by
    ``pad`` on every side.
    """
    _require_4d(x, "conv_transpose2d input")
    _require_4d(weight, "conv_transpose2d weight")
    n, c, h, w = x.shape
    ci, co, kh, kw = weight.shape
    if c != ci:
        raise DimensionError(f"conv_transpose2d: input has {c} channels, weight expects {ci}")
    if bias is not None and bias.shape != (co,):
        raise DimensionError(f"conv_transpose2d: bias shape {bias.shape} != ({co},)")
    if up_rate < 1:
        raise ConfigurationError(f"conv_transpose2d: up_rate must be >= 1, got {up_rate}")
    if pad < 0:
        raise ConfigurationError(f"conv_transpose2d: pad must be >= 0, got {pad}")
    s = up_rate
    fh, fw = (h - 1) * s + kh, (w - 1) * s + kw
    oh, ow = fh - 2 * pad, fw - 2 * pad
    if oh <= 0 or ow <= 0:
        raise ConfigurationError(f"conv_transpose2d: output size ({oh}, {ow}) is not positive")

    x_cm = x.data.transpose(1, 0, 2, 3).reshape(ci, -1)
    w_mat = weight.data.reshape(ci, -1)
    taps = (w_mat.T @ x_cm).reshape(co, kh, kw, n, h, w)
    full = np.zeros((co, n, fh, fw), dtype=taps.dtype)
    for i in range(kh):
        for j in range(kw):
            full[:, :, i:i + s * h:s, j:j + s * w:s] += taps[:, i, j]
    out = full[:, :, pad:pad + oh, pad:pad + ow].transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        gfull = np.pad(g, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        gcols = _windows(gfull, kh, kw, s, h, w).transpose(1, 4, 5, 0, 2, 3).reshape(co * kh * kw, -1)
        gx = None
        if x.requires_grad:
            gx = (w_mat @ gcols).reshape(ci, n, h, w).transpose(1, 0, 2, 3)
        gw = (x_cm @ gcols.T).reshape(weight.shape) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, backward, "conv_transpose2d")


def depthwise_conv2d(x: Tensor, kernel: np.ndarray, bias: Optional[Tensor] = None,
                     pad_begin=0, pad_end=0) -> Tensor:
    """Apply one constant 2-D kernel to every channel independently.

    The kernel is a plain array and never receives a gradient; only the input
    and the per-channel bias do.
    """
    _require_4d(x, "depthwise_conv2d input")
    kernel = np.asarray(kernel, dtype=x.dtype)
    if kernel.ndim != 2:
        raise DimensionError(f"depthwise kernel must be 2-D, got shape {kernel.shape}")
    n, c, h, w = x.shape
    if bias is not None and bias.shape != (c,):
        raise DimensionError(f"depthwise_conv2d: bias shape {bias.shape} != ({c},)")
    kh, kw = kernel.shape
    pb, pe = _pair(pad_begin), _pair(pad_end)
    oh, ow = h + pb[0] + pe[0] - kh + 1, w + pb[1] + pe[1] - kw + 1
    if oh <= 0 or ow <= 0:
        raise DimensionError("depthwise_conv2d: kernel larger than padded input")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pb[0], pe[0]), (pb[1], pe[1])))
    out = np.zeros((n, c, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            out += kernel[i, j] * xp[:, :, i:i + oh, j:j + ow]
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g):
        gx = None
        if x.requires_grad:
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + oh, j:j + ow] += kernel[i, j] * g
            gx = gxp[:, :, pb[0]:pb[0] + h, pb[1]:pb[1] + w]
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return gx, gb

    parents = (x,) if bias is None else (x, bias)
    return Tensor._from_op(out, parents, backward, "depthwise_conv2d")


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, train: bool, eps: float = 1e-5,
               momentum: float = 0.1) -> Tensor:
    """Per-channel batch normalization.

    In train mode the batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place (running variance uses the unbiased
    estimate). In eval mode the running statistics are used.
    """
    _require_4d(x, "batch_norm input")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm: gamma/beta must have shape ({c},)")
    count = n * h * w
    if count == 0:
        raise InvalidInputError("batch_norm over an empty batch/spatial extent")
    dt = x.dtype.type
    axes = (0, 2, 3)

    if train:
        mean = x.data.mean(axis=axes)
        centered = x.data - mean[None, :, None, None]
        var = (centered * centered).mean(axis=axes)
        inv_std = (1.0 / np.sqrt(var + dt(eps))).astype(x.dtype)
        unbiased = var * (count / (count - 1)) if count > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mean = running_mean.astype(x.dtype)
        centered = x.data - mean[None, :, None, None]
        inv_std = (1.0 / np.sqrt(running_var.astype(x.dtype) + dt(eps))).astype(x.dtype)

    xhat = centered * inv_std[None, :, None, None]
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def backward(g):
        gbeta = g.sum(axis=axes)
        ggamma = (g * xhat).sum(axis=axes)
        dxhat = g * gamma.data[None, :, None, None]
        if train:
            sum_d = dxhat.sum(axis=axes)[None, :, None, None]
            sum_dx = (dxhat * xhat).sum(axis=axes)[None, :, None, None]
            gx = (inv_std[None, :, None, None] / count) * (count * dxhat - sum_d - xhat * sum_dx)
        else:
            gx = dxhat * inv_std[None, :, None, None]
        return gx, ggamma, gbeta

    return Tensor._from_op(out, (x, gamma, beta), backward, "batch_norm")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, x.dtype.type(0))
    return Tensor._from_op(out, (x,), lambda g: (g * mask,), "relu")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel axis, ``a`` first."""
    _require_4d(a, "concat input")
    _require_4d(b, "concat input")
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise DimensionError(f"concat_channels: batch/spatial mismatch {a.shape} vs {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def backward(g):
        return g[:, :ca], g[:, ca:]

    return Tensor._from_op(out, (a, b), backward, "concat")


def broadcast_spatial(x: Tensor, h: int, w: int) -> Tensor:
    """Tile an ``(n, c, 1, 1)`` descriptor to ``(n, c, h, w)``."""
    _require_4d(x, "broadcast input")
    if x.shape[2:] != (1, 1):
        raise DimensionError(f"broadcast_spatial expects a 1x1 map, got {x.shape}")
    out = np.broadcast_to(x.data, (x.shape[0], x.shape[1], h, w)).copy()
    return Tensor._from_op(out, (x,), lambda g: (g.sum(axis=(2, 3), keepdims=True),), "broadcast")


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error; the subgradient at a tie is 0."""
    if pred.shape != target.shape:
        raise DimensionError(f"l1_loss: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    count = diff.size
    out = np.asarray(np.abs(diff).mean(dtype=np.float64), dtype=pred.dtype)

    def backward(g):
        gp = np.sign(diff) * (g / count)
        return gp, -gp

    return Tensor._from_op(out, (pred, target), backward, "l1_loss")
