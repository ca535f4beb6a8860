"""
Fixed smoothing kernels and the artifact-free sampling blocks.

The kernel of order ``d`` is the zero-order-hold (all-ones ``r x r``) kernel
convolved with itself ``d`` more times. Because every polyphase component of
such a kernel has the same sum, smoothing after a rate-``r`` upsampler (or
before a rate-``r`` downsampler) maps constant maps to constant maps and
removes the period-``r`` checkerboard pattern.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DimensionError
from .ops import conv2d, conv_transpose2d, depthwise_conv2d
from .tensor import Parameter, Tensor

NORMALIZATIONS = ("none", "unit", "mean")


def build_zoh_kernel(rate: int) -> np.ndarray:
    """Zero-order hold kernel: ``rate x rate`` ones."""
    if int(rate) != rate or rate < 2:
        raise ConfigurationError(f"sampling rate must be an integer >= 2, got {rate}")
    return np.ones((rate, rate), dtype=np.float64)


def full_convolve2d(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Full 2-D linear convolution of two small matrices."""
    ah, aw = a.shape
    bh, bw = b.shape
    out = np.zeros((ah + bh - 1, aw + bw - 1), dtype=np.result_type(a, b))
    for i in range(bh):
        for j in range(bw):
            out[i:i + ah, j:j + aw] += b[i, j] * a
    return out


def kernel_side(rate: int, order: int) -> int:
    return (order + 1) * (rate - 1) + 1


def normalize_kernel(kernel: np.ndarray, rate: int, normalization: str) -> np.ndarray:
    """Scale a raw kernel.

    ``unit``: every rate-polyphase component sums to 1 (raw ones for the ZOH).
    ``mean``: the whole kernel sums to 1. ``none``: unchanged.
    """
    if normalization == "none":
        return kernel.copy()
    if normalization == "unit":
        return kernel * (rate * rate / kernel.sum())
    if normalization == "mean":
        return kernel / kernel.sum()
    raise ConfigurationError(f"unknown normalization {normalization!r}; use one of {NORMALIZATIONS}")


@dataclass(frozen=True)
class FixedKernel:
    rate: int
    order: int
    normalization: str
    kernel: np.ndarray = field(repr=False, compare=False)

    @property
    def side(self) -> int:
        return self.kernel.shape[0]

    @property
    def padding(self) -> tuple[int, int]:
        """(before, after) zero padding that keeps the spatial size."""
        total = self.side - 1
        return (total - total // 2, total // 2)


def build_fixed_kernel(rate: int, order: int, normalization: str = "none") -> FixedKernel:
    if int(order) != order or order < 0:
        raise ConfigurationError(f"order of smoothness must be an integer >= 0, got {order}")
    h0 = build_zoh_kernel(rate)
    kernel = h0
    for _ in range(order):
        kernel = full_convolve2d(kernel, h0)
    kernel = normalize_kernel(kernel, rate, normalization)
    kernel.setflags(write=False)
    return FixedKernel(rate=int(rate), order=int(order), normalization=normalization, kernel=kernel)


def polyphase_sums(kernel: np.ndarray, rate: int) -> np.ndarray:
    """``rate x rate`` matrix of sums of each polyphase component."""
    return np.array([[kernel[p::rate, q::rate].sum() for q in range(rate)] for p in range(rate)])


class FixedConvLayer:
    """Depthwise convolution with a fixed kernel and a trainable per-channel bias."""

    def __init__(self, kernel: FixedKernel, bias: Parameter):
        if bias.ndim != 1:
            raise DimensionError(f"fixed layer bias must be 1-D, got {bias.shape}")
        self.kernel = kernel
        self.bias = bias

    @property
    def channels(self) -> int:
        return self.bias.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        return fixed_conv(x, self)


def fixed_conv(x: Tensor, layer: FixedConvLayer) -> Tensor:
    if x.ndim != 4 or x.shape[1] != layer.channels:
        raise DimensionError(
            f"fixed_conv: input shape {x.shape} does not have {layer.channels} channels")
    before, after = layer.kernel.padding
    return depthwise_conv2d(x, layer.kernel.kernel, layer.bias, pad_begin=before, pad_end=after)


def fixed_up(x: Tensor, weight: Tensor, bias: Optional[Tensor], layer: Optional[FixedConvLayer],
             rate: int = 2) -> Tensor:
    """Upsampling block: 4x4 transposed conv (rate 2, pad 1), then the fixed conv.

    ``layer=None`` gives the plain transposed-conv upsampler used by the
    ablation baselines.
    """
    if rate != 2:
        raise ConfigurationError("the upsampling block is defined for rate 2 only")
    kh = weight.shape[2]
    pad = (kh - rate) // 2
    y = conv_transpose2d(x, weight, bias, up_rate=rate, pad=pad)
    return y if layer is None else fixed_conv(y, layer)


def fixed_down(x: Tensor, weight: Tensor, bias: Optional[Tensor], layer: Optional[FixedConvLayer],
               rate: int = 2) -> Tensor:
    """Downsampling block: the fixed conv, then a 3x3 conv with stride 2, pad 1."""
    if rate != 2:
        raise ConfigurationError("the downsampling block is defined for rate 2 only")
    if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ConfigurationError(f"fixed_down needs even spatial dims, got {x.shape}")
    if layer is not None:
        x = fixed_conv(x, layer)
    return conv2d(x, weight, bias, stride=rate, pad_begin=1, pad_end=0)
