"""Transmitter-side segmentation network.

Residual bottleneck backbone (output stride 8, stages 4-5 dilated instead of
strided), a four-bin pyramid pooling module whose branches are gated by
channel then spatial attention, and a fuse/classify/upsample head.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..autodiff import ops
from ..autodiff.nn import Conv2d, ConvNormAct, Module
from ..autodiff.tensor import Tensor, no_grad
from ..errors import ConfigError, GeometryError, ShapeError
from ..labelmap import LabelMap

FULL_BASE_CHANNELS = 64
FULL_STAGE_BLOCKS = (3, 4, 6, 3)

# (stride, dilation) of the first 3x3 conv in stages 2..5
_STAGE_GEOMETRY = ((1, 1), (2, 1), (1, 2), (1, 4))


@dataclass
class SegNetConfig:
    num_classes: int = 21
    base_channels: int = 16
    stage_blocks: tuple[int, ...] = (1, 1, 1, 1)
    output_stride: int = 8
    ppm_bins: tuple[int, ...] = (1, 2, 3, 6)
    height: int = 64
    width: int = 64
    attention_reduction: int = 4
    spatial_kernel: int = 7
    seed: int = 0

    def __post_init__(self):
        self.stage_blocks = tuple(self.stage_blocks)
        self.ppm_bins = tuple(self.ppm_bins)
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.output_stride != 8:
            raise ConfigError("only output_stride 8 is supported")
        if len(self.stage_blocks) != 4 or min(self.stage_blocks) < 1:
            raise ConfigError("stage_blocks needs four positive entries")
        if not self.ppm_bins or min(self.ppm_bins) < 1:
            raise ConfigError("ppm_bins needs positive entries")
        if list(self.ppm_bins) != sorted(set(self.ppm_bins)):
            raise ConfigError("ppm_bins must be strictly increasing")
        self.check_extent(self.height, self.width)

    @classmethod
    def full_scale(cls, num_classes: int = 21, height: int = 512, width: int = 512) -> "SegNetConfig":
        return cls(num_classes=num_classes, base_channels=FULL_BASE_CHANNELS,
                   stage_blocks=FULL_STAGE_BLOCKS, height=height, width=width)

    @property
    def backbone_channels(self) -> int:
        return 32 * self.base_channels

    def check_extent(self, h: int, w: int) -> None:
        if h % self.output_stride or w % self.output_stride:
            raise GeometryError(f"input {h}x{w} not divisible by output stride {self.output_stride}")
        if h < self.output_stride or w < self.output_stride:
            raise GeometryError(f"input {h}x{w} smaller than output stride {self.output_stride}")
        fh, fw = h // self.output_stride, w // self.output_stride
        if max(self.ppm_bins) > min(fh, fw):
            raise GeometryError(f"pyramid bin {max(self.ppm_bins)} exceeds the {fh}x{fw} feature map of a {h}x{w} input")


def shape_chain(config: SegNetConfig, h: int, w: int) -> list[tuple[str, tuple[int, int, int]]]:
    """Symbolic ``(C, H, W)`` after each stage, computed without running the network."""
    config.check_extent(h, w)
    b = config.base_channels
    chain = [("input", (3, h, w)), ("conv1", (b, h // 2, w // 2)), ("pool", (b, h // 4, w // 4))]
    size = (h // 4, w // 4)
    for k, (stride, _) in enumerate(_STAGE_GEOMETRY):
        if stride == 2:
            size = (size[0] // 2, size[1] // 2)
        chain.append((f"conv{k + 2}_x", (4 * b * 2 ** k, *size)))
    cb = config.backbone_channels
    chain.append(("pyramid", (2 * cb, *size)))
    chain.append(("head", (config.num_classes, h, w)))
    return chain


class Bottleneck(Module):
    """1x1 -> 3x3 -> 1x1 residual unit; ``kind="conv"`` projects the skip path."""

    def __init__(self, rng, c_in: int, mid: int, c_out: int, stride: int = 1, dilation: int = 1,
                 kind: str = "identity"):
        super().__init__()
        if kind == "identity" and (c_in != c_out or stride != 1):
            raise ShapeError(f"identity block needs c_in == c_out and stride 1 ({c_in}->{c_out}, s{stride})")
        self.kind = kind
        self.reduce = ConvNormAct(rng, c_in, mid, 1)
        self.spatial = ConvNormAct(rng, mid, mid, 3, stride=stride, dilation=dilation)
        self.expand = ConvNormAct(rng, mid, c_out, 1, act=None)
        self.project = ConvNormAct(rng, c_in, c_out, 1, stride=stride, act=None) if kind == "conv" else None

    def forward(self, x: Tensor) -> Tensor:
        y = self.expand(self.spatial(self.reduce(x)))
        skip = self.project(x) if self.project is not None else x
        if skip.shape != y.shape:
            raise ShapeError(f"skip {skip.shape} does not match residual {y.shape}")
        return (y + skip).relu()


def residual_block_forward(x: Tensor, block: Bottleneck) -> Tensor:
    return block(x)


class Backbone(Module):
    def __init__(self, rng, base: int, stage_blocks):
        super().__init__()
        self.stem = ConvNormAct(rng, 3, base, 7, stride=2, pad=3)
        blocks = []
        c_in = base
        for k, (n_blocks, (stride, dilation)) in enumerate(zip(stage_blocks, _STAGE_GEOMETRY)):
            mid = base * 2 ** k
            c_out = 4 * mid
            for i in range(n_blocks):
                first = i == 0
                blocks.append(Bottleneck(rng, c_in, mid, c_out,
                                         stride=stride if first else 1, dilation=dilation,
                                         kind="conv" if first else "identity"))
                c_in = c_out
        self.blocks = blocks
        self.out_channels = c_in

    def forward(self, x: Tensor) -> Tensor:
        y = self.stem(x)
        y = ops.pool2d(y, "max", 3, 2, pad=1)
        for block in self.blocks:
            y = block(y)
        return y


class ChannelAttention(Module):
    """Squeeze (global mean) -> two-layer bottleneck -> sigmoid gate per channel."""

    def __init__(self, rng, channels: int, reduction: int = 4):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.fc1 = Conv2d(rng, channels, hidden, 1)
        self.fc2 = Conv2d(rng, hidden, channels, 1)

    def weights(self, u: Tensor) -> Tensor:
        z = ops.spatial_mean(u)
        return self.fc2(self.fc1(z).relu()).sigmoid()

    def forward(self, u: Tensor) -> Tensor:
        return u * self.weights(u)


class SpatialAttention(Module):
    """Channel-wise max and mean maps -> conv -> sigmoid gate per pixel."""

    def __init__(self, rng, kernel: int = 7):
        super().__init__()
        self.conv = Conv2d(rng, 2, 1, kernel, pad=kernel // 2)

    def weights(self, u: Tensor) -> Tensor:
        stacked = ops.concat_channels(ops.channel_max(u), ops.channel_mean(u))
        return self.conv(stacked).sigmoid()

    def forward(self, u: Tensor) -> Tensor:
        return u * self.weights(u)


class PyramidBranch(Module):
    def __init__(self, rng, channels: int, bins: int, reduction: int, spatial_kernel: int):
        super().__init__()
        self.bins = bins
        self.reduce = ConvNormAct(rng, channels, channels // 4, 1, norm=None)
        self.channel_att = ChannelAttention(rng, channels // 4, reduction)
        self.spatial_att = SpatialAttention(rng, spatial_kernel)

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[-2:]
        y = self.reduce(ops.adaptive_avg_pool2d(x, self.bins))
        y = self.spatial_att(self.channel_att(y))
        return ops.bilinear_upsample(y, h, w)


class PyramidPooling(Module):
    def __init__(self, rng, channels: int, bins=(1, 2, 3, 6), reduction: int = 4, spatial_kernel: int = 7):
        super().__init__()
        if channels % 4:
            raise ShapeError("pyramid pooling needs a channel count divisible by 4")
        self.branches = [PyramidBranch(rng, channels, b, reduction, spatial_kernel) for b in bins]

    def forward(self, x: Tensor) -> Tensor:
        return ops.concat_channels(x, *(branch(x) for branch in self.branches))


class SegHead(Module):
    """3x3 fusion -> 1x1 class projection -> bilinear upsample to the input size."""

    def __init__(self, rng, channels: int, num_classes: int):
        super().__init__()
        self.fuse = ConvNormAct(rng, channels, channels // 8, 3)
        self.classify = ConvNormAct(rng, channels // 8, num_classes, 1, norm=None, act=None)

    def forward(self, x: Tensor, out_h: int, out_w: int) -> Tensor:
        return ops.bilinear_upsample(self.classify(self.fuse(x)), out_h, out_w)


class SegNet(Module):
    def __init__(self, config: SegNetConfig):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.backbone = Backbone(rng, config.base_channels, config.stage_blocks)
        cb = self.backbone.out_channels
        self.pyramid = PyramidPooling(rng, cb, config.ppm_bins, config.attention_reduction, config.spatial_kernel)
        self.head = SegHead(rng, 2 * cb, config.num_classes)

    def forward(self, x: Tensor) -> Tensor:
        """Normalized image ``[N, 3, H, W]`` (or ``[3, H, W]``) -> class logits of the same extent."""
        h, w = x.shape[-2:]
        self.config.check_extent(h, w)
        features = self.backbone(x)
        return self.head(self.pyramid(features), h, w)


def normalize_image(image) -> Tensor:
    """[0, 255] pixels -> [-1, 1] network input."""
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    return Tensor(data.astype(np.float32) / np.float32(127.5) - np.float32(1.0))


def argmax_labels(logits: np.ndarray) -> np.ndarray:
    """Per-pixel argmax over the channel axis; ties resolve to the lowest index."""
    return np.argmax(logits, axis=-3).astype(np.uint8)


def segment(image, model: SegNet) -> LabelMap:
    """Run the full transmitter on one ``[3, H, W]`` image with pixels in [0, 255]."""
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            logits = model(normalize_image(image))
    finally:
        model.train(was_training)
    return LabelMap(argmax_labels(logits.data), model.config.num_classes)
