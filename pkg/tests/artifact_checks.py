"""Layer-level constant-in/constant-out probes for the sampling blocks."""
from __future__ import annotations

import numpy as np

from cafnet.fixed import FixedConvLayer, build_fixed_kernel, fixed_down, fixed_up
from cafnet.tensor import Parameter, Tensor, default_dtype, mul, tensor_sum

MARGIN = 2


def _interior_spread(a: np.ndarray, margin: int = MARGIN) -> float:
    core = a[:, :, margin:-margin, margin:-margin]
    return float((core.max(axis=(2, 3)) - core.min(axis=(2, 3))).max())


def up_spread(seed: int, fixed: bool, order: int = 0, size: int = 8) -> float:
    """Interior max-min of ``fixed_up`` applied to a constant map, random weights."""
    rng = np.random.default_rng(seed)
    c_in, c_out = 3, 4
    with default_dtype(np.float64):
        x = Tensor(np.full((1, c_in, size, size), rng.uniform(-2, 2)))
        w = Tensor(rng.normal(size=(c_in, c_out, 4, 4)))
        layer = None
        if fixed:
            layer = FixedConvLayer(build_fixed_kernel(2, order, "unit"),
                                   Parameter(rng.normal(size=c_out), "fixed.bias"))
        out = fixed_up(x, w, Tensor(np.zeros(c_out)), layer)
    assert out.shape[2:] == (2 * size, 2 * size)
    return _interior_spread(out.data, MARGIN + order)


def down_backward_spread(seed: int, fixed: bool, order: int = 0, size: int = 16) -> float:
    """Interior max-min of the input gradient of ``fixed_down`` under a constant upstream gradient."""
    rng = np.random.default_rng(seed)
    c_in, c_out = 3, 6
    with default_dtype(np.float64):
        x = Parameter(rng.normal(size=(1, c_in, size, size)), "x")
        w = Tensor(rng.normal(size=(c_out, c_in, 3, 3)))
        layer = None
        if fixed:
            layer = FixedConvLayer(build_fixed_kernel(2, order, "mean"),
                                   Parameter(rng.normal(size=c_in), "fixed.bias"))
        out = fixed_down(x, w, Tensor(rng.normal(size=c_out)), layer)
        assert out.shape[2:] == (size // 2, size // 2)
        tensor_sum(mul(out, Tensor(np.full(out.shape, rng.uniform(0.5, 2.0))))).backward()
    return _interior_spread(x.grad, MARGIN + order)
