"""Receiver-side restoration: U-shaped generator with residual skips and a
dilated-convolution patch discriminator, trained as a cycle-consistent pair."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import ops
from ..autodiff.nn import ConvNormAct, ConvTranspose2d, Module, Norm2d
from ..autodiff.tensor import Tensor, no_grad
from ..errors import ConfigError, GeometryError
from ..labelmap import LabelMap, colorize


@dataclass
class GeneratorConfig:
    in_channels: int = 3
    out_channels: int = 3
    levels: int = 4
    base_filters: int = 16
    res_blocks: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.levels < 1 or self.base_filters < 1 or self.res_blocks < 0:
            raise ConfigError("invalid generator config")

    def check_extent(self, h: int, w: int) -> None:
        m = 2 ** self.levels
        if h % m or w % m:
            raise GeometryError(f"generator input {h}x{w} must be divisible by {m}")


@dataclass
class DiscriminatorConfig:
    in_channels: int = 3
    layers: int = 5
    filters: int = 32
    dilation: int = 2
    seed: int = 1

    def __post_init__(self):
        if self.layers < 1 or self.dilation < 1:
            raise ConfigError("invalid discriminator config")

    def check_extent(self, h: int, w: int) -> None:
        m = 2 ** self.layers
        if h < m or w < m or h % m or w % m:
            raise GeometryError(f"discriminator input {h}x{w} must be a positive multiple of {m}")


class ResidualBlock(Module):
    """Three 3x3 conv/instance-norm layers added back onto the input."""

    def __init__(self, rng, channels: int):
        super().__init__()
        self.c1 = ConvNormAct(rng, channels, channels, 3, norm="instance")
        self.c2 = ConvNormAct(rng, channels, channels, 3, norm="instance")
        self.c3 = ConvNormAct(rng, channels, channels, 3, norm="instance", act=None)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.c3(self.c2(self.c1(x)))


class EncoderLevel(Module):
    def __init__(self, rng, c_in: int, c_out: int, res_blocks: int):
        super().__init__()
        self.conv = ConvNormAct(rng, c_in, c_out, 3, norm="instance")
        self.res = [ResidualBlock(rng, c_out) for _ in range(res_blocks)]

    def forward(self, x: Tensor) -> Tensor:
        y = self.conv(x)
        for block in self.res:
            y = block(y)
        return y


class DecoderLevel(Module):
    def __init__(self, rng, c_in: int, c_out: int):
        super().__init__()
        self.up = ConvTranspose2d(rng, c_in, c_out, 2, stride=2)
        self.up_norm = Norm2d(c_out, "instance")
        self.fuse = ConvNormAct(rng, 2 * c_out, c_out, 3, norm="instance")

    def forward(self, x: Tensor, skip: Tensor) -> Tensor:
        up = self.up_norm(self.up(x)).relu()
        return self.fuse(ops.concat_channels(up, skip))


class Generator(Module):
    """Encoder levels [conv -> residual blocks] feed both the next level (after
    2x2 max pooling) and, as skip connections, the mirrored decoder level."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(config.seed)
        widths = [config.base_filters * 2 ** k for k in range(config.levels)]
        enc, c_in = [], config.in_channels
        for c in widths:
            enc.append(EncoderLevel(rng, c_in, c, config.res_blocks))
            c_in = c
        self.encoder = enc
        self.bottleneck = EncoderLevel(rng, widths[-1], widths[-1], config.res_blocks)
        dec = []
        c_in = widths[-1]
        for c in reversed(widths):
            dec.append(DecoderLevel(rng, c_in, c))
            c_in = c
        self.decoder = dec
        self.out = ConvNormAct(rng, widths[0], config.out_channels, 1, norm=None, act=None)

    def forward(self, x: Tensor) -> Tensor:
        """Image in [-1, 1] -> image in [-1, 1] of the same extent."""
        self.config.check_extent(*x.shape[-2:])
        skips = []
        y = x
        for level in self.encoder:
            y = level(y)
            skips.append(y)
            y = ops.pool2d(y, "max", 2, 2)
        y = self.bottleneck(y)
        for level, skip in zip(self.decoder, reversed(skips)):
            y = level(y, skip)
        return self.out(y).tanh()


class Discriminator(Module):
    """Stride-2 dilated 3x3 convolutions; the last layer emits one channel of
    patch realness probabilities."""

    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(config.seed)
        layers, c_in = [], config.in_channels
        for i in range(config.layers):
            last = i == config.layers - 1
            layers.append(ConvNormAct(
                rng, c_in, 1 if last else config.filters, 3, stride=2, dilation=config.dilation,
                norm=None if (i == 0 or last) else "instance", act=None if last else "relu"))
            c_in = config.filters
        self.layers = layers

    def forward(self, x: Tensor) -> Tensor:
        self.config.check_extent(*x.shape[-2:])
        y = x
        for layer in self.layers:
            y = layer(y)
        return y.sigmoid()


def generator_forward(image: Tensor, generator: Generator) -> Tensor:
    return generator(image)


def discriminator_forward(image: Tensor, discriminator: Discriminator) -> Tensor:
    return discriminator(image)


def receptive_field(layers: int, dilation: int, kernel: int = 3, stride: int = 2) -> int:
    """Input extent seen by one output element of a stack of identical conv layers."""
    rf = 1
    for _ in range(layers):
        rf = (rf - 1) * stride + dilation * (kernel - 1) + 1
    return rf


def restore(semantic, generator: Generator, palette: np.ndarray | None = None) -> np.ndarray:
    """Semantic image -> restored RGB ``[3, H, W]`` with pixels in [0, 255].

    ``semantic`` is a :class:`LabelMap` (colorized with ``palette`` first) or an
    RGB array already in [0, 255].
    """
    rgb = colorize(semantic, palette) if isinstance(semantic, LabelMap) else np.asarray(semantic, np.float32)
    was_training = generator.training
    generator.eval()
    try:
        with no_grad():
            out = generator(Tensor(rgb / np.float32(127.5) - np.float32(1.0)))
    finally:
        generator.train(was_training)
    return ((out.data + np.float32(1.0)) * np.float32(127.5)).astype(np.float32)
