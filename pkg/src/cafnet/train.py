"""Training loop: seeded shuffling, paired augmentation, l1 loss, Adam."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .data import SamplePair, SkipSample, augment, resize_bilinear, sample_rng
from .errors import ConfigurationError, InvalidInputError, NumericError
from .network import Network
from .ops import l1_loss
from .optim import AdamState, adam_step
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    crop: int = 256
    scale_range: tuple[float, float] = (0.6, 1.0)
    flip_prob: float = 0.5
    batch_size: int = 1
    seed: int = 0

    def validate(self, depth: Optional[int] = None) -> None:
        lo, hi = self.scale_range
        if not 0 < lo <= hi <= 1:
            raise ConfigurationError(f"scale_range must satisfy 0 < min <= max <= 1, got {self.scale_range}")
        if not 0 <= self.flip_prob <= 1:
            raise ConfigurationError(f"flip_prob must lie in [0, 1], got {self.flip_prob}")
        if self.epochs < 0 or self.batch_size < 1 or self.crop < 1:
            raise ConfigurationError("epochs >= 0, batch_size >= 1 and crop >= 1 are required")
        if depth is not None and self.crop % (2 ** depth):
            raise ConfigurationError(f"crop {self.crop} is not divisible by 2**{depth}")


@dataclass
class TrainResult:
    epoch_losses: list[float] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    state: AdamState = field(default_factory=AdamState)


EpochCallback = Callable[[int, float, Network, AdamState], None]


def global_input(patches: np.ndarray, size: int) -> np.ndarray:
    return resize_bilinear(patches, size, size).astype(patches.dtype, copy=False)


def make_batch(net: Network, inputs: np.ndarray) -> tuple[Tensor, Optional[Tensor]]:
    x = Tensor(inputs, dtype=net.dtype)
    if net.config.variant != "local_global":
        return x, None
    return x, Tensor(global_input(inputs, net.config.global_input_size), dtype=net.dtype)


def train(net: Network, dataset: Sequence[SamplePair], config: TrainConfig,
          callbacks: Sequence[EpochCallback] = (),
          state: Optional[AdamState] = None) -> TrainResult:
    """Train ``net`` in place; returns per-epoch and per-step mean l1 losses.

    Raises :class:`NumericError` on a non-finite loss or gradient, before the
    offending step touches the parameters.
    """
    config.validate(net.config.depth)
    if not dataset:
        raise InvalidInputError("training needs a non-empty dataset")
    result = TrainResult(state=state if state is not None else AdamState())
    params = net.parameters()

    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(dataset))
        patches = []
        for idx in order:
            rng = sample_rng(config.seed, epoch, int(idx))
            try:
                patches.append(augment(dataset[idx], rng, config.crop, config.scale_range,
                                       config.flip_prob))
            except SkipSample as exc:
                log.warning("skipping %s: %s", dataset[idx].identifier, exc)
        if not patches:
            raise InvalidInputError("every sample is smaller than the crop size")

        losses = []
        for start in range(0, len(patches), config.batch_size):
            chunk = patches[start:start + config.batch_size]
            x, g = make_batch(net, np.stack([a for a, _ in chunk]))
            target = Tensor(np.stack([b for _, b in chunk]), dtype=net.dtype)
            net.zero_grad()
            loss = l1_loss(net.forward(x, g, train=True), target)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(f"loss became {value} at epoch {epoch}")
            loss.backward()
            adam_step(params, result.state, lr=config.lr, beta1=config.beta1,
                      beta2=config.beta2, eps=config.adam_epsilon)
            losses.append(value)
            result.step_losses.append(value)

        mean = float(np.mean(losses))
        result.epoch_losses.append(mean)
        log.info("epoch %d mean l1 %.6f", epoch, mean)
        for cb in callbacks:
            cb(epoch, mean, net, result.state)
    net.zero_grad()
    return result
