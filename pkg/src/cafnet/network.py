"""
Encoder/decoder enhancement networks for the four ablation architectures.

``variant="unet"`` is a plain U-Net; ``variant="local_global"`` adds a global
encoder that reduces a 128x128 resize of the input to a 1x1x64 descriptor,
which is broadcast and concatenated at the bottleneck. ``fixed_layers``
swaps the plain samplers for the fixed-kernel blocks in :mod:`cafnet.fixed`.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DimensionError, UsageError
from .fixed import FixedConvLayer, build_fixed_kernel, fixed_down, fixed_up
from .ops import batch_norm, broadcast_spatial, concat_channels, conv2d, relu
from .tensor import Parameter, Tensor, get_default_dtype

VARIANTS = ("unet", "local_global")


@dataclass
class NetworkConfig:
    variant: str = "local_global"
    fixed_layers: bool = True
    encoder_widths: tuple[int, ...] = (32, 64, 128, 256)
    bottleneck_width: int = 512
    decoder_widths: Optional[tuple[int, ...]] = None
    global_width: int = 64
    global_input_size: int = 128
    smoothness_order: int = 0
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        self.encoder_widths = tuple(int(k) for k in self.encoder_widths)
        if self.decoder_widths is None:
            self.decoder_widths = tuple(reversed(self.encoder_widths))
        self.decoder_widths = tuple(int(k) for k in self.decoder_widths)
        self.validate()

    @property
    def depth(self) -> int:
        return len(self.encoder_widths)

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.depth == 0:
            raise ConfigurationError("network needs at least one encoder level")
        if len(self.decoder_widths) != self.depth:
            raise ConfigurationError(
                f"{self.depth} encoder levels but {len(self.decoder_widths)} decoder levels")
        widths = (*self.encoder_widths, self.bottleneck_width, *self.decoder_widths, self.global_width)
        if any(k <= 0 for k in widths):
            raise ConfigurationError(f"all widths must be positive, got {widths}")
        if self.smoothness_order < 0:
            raise ConfigurationError("smoothness_order must be >= 0")
        if self.variant == "local_global":
            size = self.global_input_size
            if size < 4 or size & (size - 1):
                raise ConfigurationError(
                    f"global_input_size must be a power of two >= 4, got {size}")

    @property
    def global_stages(self) -> int:
        return int(np.log2(self.global_input_size // 4))

    def to_dict(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(k) for k in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            out[f.name] = str(v) if not isinstance(v, float) else repr(v)
        return out

    @classmethod
    def from_dict(cls, d: dict[str, str]) -> "NetworkConfig":
        kwargs = {}
        types = {f.name: f.type for f in fields(cls)}
        for key, raw in d.items():
            if key not in types:
                raise ConfigurationError(f"unknown network config key {key!r}")
            if key in ("encoder_widths", "decoder_widths"):
                kwargs[key] = tuple(int(k) for k in raw.split(",") if k)
            elif key == "fixed_layers":
                if raw not in ("true", "false"):
                    raise ConfigurationError(f"fixed_layers must be true/false, got {raw!r}")
                kwargs[key] = raw == "true"
            elif key in ("bn_eps", "bn_momentum"):
                kwargs[key] = float(raw)
            elif key == "variant":
                kwargs[key] = raw
            else:
                kwargs[key] = int(raw)
        return cls(**kwargs)


@dataclass
class _BatchNormState:
    mean: np.ndarray
    var: np.ndarray


class Network:
    """Instantiated parameters, batch-norm running statistics and the forward pass."""

    def __init__(self, config: NetworkConfig, seed: int = 0, dtype=None):
        config.validate()
        self.config = config
        self.dtype = np.dtype(dtype) if dtype is not None else get_default_dtype()
        self._params: dict[str, Parameter] = {}
        self._bn: dict[str, _BatchNormState] = {}
        self._rng = np.random.default_rng(seed)
        rate = 2
        self.up_kernel = build_fixed_kernel(rate, config.smoothness_order, "unit")
        self.down_kernel = build_fixed_kernel(rate, config.smoothness_order, "mean")
        self._fixed: dict[str, FixedConvLayer] = {}
        self._build()
        del self._rng

    # -- construction -------------------------------------------------------
    def _param(self, name: str, value: np.ndarray) -> Parameter:
        if name in self._params:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        p = Parameter(value, name=name, dtype=self.dtype)
        self._params[name] = p
        return p

    def _he(self, name: str, shape: tuple[int, ...], fan_in: float) -> Parameter:
        std = np.sqrt(2.0 / fan_in)
        return self._param(name, self._rng.normal(0.0, std, size=shape))

    def _conv(self, name: str, c_in: int, c_out: int, k: int) -> None:
        self._he(f"{name}.weight", (c_out, c_in, k, k), c_in * k * k)
        self._param(f"{name}.bias", np.zeros(c_out))

    def _conv_bn(self, name: str, c_in: int, c_out: int, k: int = 3) -> None:
        self._conv(name, c_in, c_out, k)
        self._param(f"{name}.bn.gamma", np.ones(c_out))
        self._param(f"{name}.bn.beta", np.zeros(c_out))
        self._bn[f"{name}.bn"] = _BatchNormState(np.zeros(c_out, dtype=self.dtype),
                                                  np.ones(c_out, dtype=self.dtype))

    def _down(self, name: str, c_in: int, c_out: int) -> None:
        if self.config.fixed_layers:
            bias = self._param(f"{name}.fixed.bias", np.zeros(c_in))
            self._fixed[name] = FixedConvLayer(self.down_kernel, bias)
        self._conv(f"{name}.conv", c_in, c_out, 3)

    def _up(self, name: str, c_in: int, c_out: int) -> None:
        # A 4x4 kernel at rate 2 feeds each output pixel from 2x2 input taps.
        self._he(f"{name}.tconv.weight", (c_in, c_out, 4, 4), c_in * 4)
        self._param(f"{name}.tconv.bias", np.zeros(c_out))
        if self.config.fixed_layers:
            bias = self._param(f"{name}.fixed.bias", np.zeros(c_out))
            self._fixed[name] = FixedConvLayer(self.up_kernel, bias)

    def _build(self) -> None:
        cfg = self.config
        c = 3
        for i, k in enumerate(cfg.encoder_widths):
            self._conv_bn(f"enc{i}.conv0", c, k)
            self._conv_bn(f"enc{i}.conv1", k, k)
            nxt = cfg.encoder_widths[i + 1] if i + 1 < cfg.depth else cfg.bottleneck_width
            self._down(f"enc{i}.down", k, nxt)
            c = nxt
        if cfg.variant == "local_global":
            g = 3
            for s in range(cfg.global_stages):
                self._conv_bn(f"glob{s}.conv", g, cfg.global_width)
                self._down(f"glob{s}.down", cfg.global_width, cfg.global_width)
                g = cfg.global_width
            self._conv_bn("glob.final", cfg.global_width, cfg.global_width, k=4)
            c += cfg.global_width
        self._conv_bn("mid.conv0", c, cfg.bottleneck_width)
        self._conv_bn("mid.conv1", cfg.bottleneck_width, cfg.bottleneck_width)
        c = cfg.bottleneck_width
        for i, k in enumerate(cfg.decoder_widths):
            level = cfg.depth - 1 - i
            skip = cfg.encoder_widths[level]
            self._up(f"dec{i}.up", c, k)
            self._conv_bn(f"dec{i}.conv0", k + skip, k)
            self._conv_bn(f"dec{i}.conv1", k, k)
            c = k
        self._he("head.weight", (3, c, 1, 1), c)
        self._param("head.bias", np.zeros(3))

    # -- parameter access ---------------------------------------------------
    def parameters(self) -> list[Parameter]:
        return [self._params[k] for k in sorted(self._params)]

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        return [(k, self._params[k]) for k in sorted(self._params)]

    def parameter(self, name: str) -> Parameter:
        return self._params[name]

    def count_parameters(self) -> int:
        return int(sum(p.size for p in self._params.values()))

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        """Batch-norm running statistics, sorted by name."""
        out = []
        for name in sorted(self._bn):
            out.append((f"{name}.running_mean", self._bn[name].mean))
            out.append((f"{name}.running_var", self._bn[name].var))
        return out

    def fixed_layers(self) -> dict[str, FixedConvLayer]:
        return dict(self._fixed)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    # -- forward ------------------------------------------------------------
    def _cbr(self, name: str, x: Tensor, train: bool, pad: bool = True) -> Tensor:
        w = self._params[f"{name}.weight"]
        k = w.shape[2]
        p_b, p_e = ((k - 1) // 2, k // 2) if pad else (0, 0)
        y = conv2d(x, w, self._params[f"{name}.bias"], stride=1, pad_begin=p_b, pad_end=p_e)
        st = self._bn[f"{name}.bn"]
        y = batch_norm(y, self._params[f"{name}.bn.gamma"], self._params[f"{name}.bn.beta"],
                       st.mean, st.var, train=train, eps=self.config.bn_eps,
                       momentum=self.config.bn_momentum)
        return relu(y)

    def _downsample(self, name: str, x: Tensor) -> Tensor:
        return fixed_down(x, self._params[f"{name}.conv.weight"], self._params[f"{name}.conv.bias"],
                          self._fixed.get(name))

    def _upsample(self, name: str, x: Tensor) -> Tensor:
        return fixed_up(x, self._params[f"{name}.tconv.weight"], self._params[f"{name}.tconv.bias"],
                        self._fixed.get(name))

    def global_descriptor(self, global_image: Tensor, train: bool = False) -> Tensor:
        cfg = self.config
        size = cfg.global_input_size
        if global_image.ndim != 4 or global_image.shape[1:] != (3, size, size):
            raise DimensionError(
                f"global input must be (n, 3, {size}, {size}), got {global_image.shape}")
        g = global_image
        for s in range(cfg.global_stages):
            g = self._cbr(f"glob{s}.conv", g, train)
            g = self._downsample(f"glob{s}.down", g)
        return self._cbr("glob.final", g, train, pad=False)

    def forward(self, image: Tensor, global_image: Optional[Tensor] = None,
                train: bool = False) -> Tensor:
        cfg = self.config
        if image.ndim != 4 or image.shape[1] != 3:
            raise DimensionError(f"input must be (n, 3, h, w), got {image.shape}")
        n, _, h, w = image.shape
        factor = 2 ** cfg.depth
        if h % factor or w % factor or h == 0 or w == 0:
            raise ConfigurationError(
                f"input size {h}x{w} must be a positive multiple of {factor}")
        if cfg.variant == "local_global" and global_image is None:
            raise UsageError("the local_global variant needs a global_image input")
        if cfg.variant == "unet" and global_image is not None:
            raise UsageError("the unet variant takes no global_image input")

        x = image
        skips = []
        for i in range(cfg.depth):
            x = self._cbr(f"enc{i}.conv0", x, train)
            x = self._cbr(f"enc{i}.conv1", x, train)
            skips.append(x)
            x = self._downsample(f"enc{i}.down", x)
        if cfg.variant == "local_global":
            if global_image.shape[0] != n:
                raise DimensionError("global_image batch size differs from image batch size")
            desc = self.global_descriptor(global_image, train)
            x = concat_channels(x, broadcast_spatial(desc, x.shape[2], x.shape[3]))
        x = self._cbr("mid.conv0", x, train)
        x = self._cbr("mid.conv1", x, train)
        for i in range(cfg.depth):
            x = self._upsample(f"dec{i}.up", x)
            x = concat_channels(x, skips[cfg.depth - 1 - i])
            x = self._cbr(f"dec{i}.conv0", x, train)
            x = self._cbr(f"dec{i}.conv1", x, train)
        y = conv2d(x, self._params["head.weight"], self._params["head.bias"])
        return relu(y)

    __call__ = forward


def build_network(config: NetworkConfig, seed: int = 0, dtype=None) -> Network:
    return Network(config, seed=seed, dtype=dtype)


def parameters(net: Network) -> list[Parameter]:
    return net.parameters()


def count_parameters(net: Network) -> int:
    return net.count_parameters()
