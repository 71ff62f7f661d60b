"""
Encoder Module
Small convolutional pyramid encoder producing features at strides 4/8/16/32
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

from config.macmd_config import IMAGE_CHANNELS, SIZE_MULTIPLE
from src.numerics.layers import ConvBNReLU, Module
from src.numerics.params import ParamStore
from src.numerics.tensor import Tensor
from src.utils.errors import ShapeError


@dataclass
class FeaturePyramid:
    """Encoder outputs X1..X4; each level halves the previous one"""
    x1: Tensor
    x2: Tensor
    x3: Tensor
    x4: Tensor

    def __post_init__(self):
        levels = self.levels
        for i in range(1, 4):
            prev, cur = levels[i - 1].shape, levels[i].shape
            if cur[2] * 2 != prev[2] or cur[3] * 2 != prev[3]:
                raise ShapeError(f"feature pyramid level {i + 1} {cur[2:]} is not half of level {i} {prev[2:]}")

    @property
    def levels(self) -> List[Tensor]:
        return [self.x1, self.x2, self.x3, self.x4]

    @property
    def channels(self) -> Tuple[int, ...]:
        return tuple(x.shape[1] for x in self.levels)


class EncoderStage(Module):
    """Two 3x3 conv + BN + ReLU layers; the first carries the stage's downsampling"""

    def __init__(self, store: ParamStore, name: str, in_channels: int, out_channels: int,
                 strides: Tuple[int, int]):
        super().__init__(store, name)
        self.strides = strides
        self.conv1 = ConvBNReLU(store, self.scoped("conv1"), in_channels, out_channels,
                                kernel_size=3, stride=strides[0], padding=1)
        self.conv2 = ConvBNReLU(store, self.scoped("conv2"), out_channels, out_channels,
                                kernel_size=3, stride=strides[1], padding=1)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv2(self.conv1(x))


class PyramidEncoder(Module):
    """Stage 1 downsamples x4 (two stride-2 convs); stages 2-4 downsample x2 each"""

    def __init__(self, store: ParamStore, name: str, channels: Sequence[int],
                 in_channels: int = IMAGE_CHANNELS):
        super().__init__(store, name)
        self.channels = tuple(channels)
        self.in_channels = in_channels
        widths = (in_channels,) + self.channels
        self.stages = [
            EncoderStage(store, self.scoped(f"stage{s + 1}"), widths[s], widths[s + 1],
                         (2, 2) if s == 0 else (2, 1))
            for s in range(4)
        ]

    def forward(self, image: Tensor) -> FeaturePyramid:
        return encoder_forward(image, self)


def encoder_forward(image: Tensor, encoder: PyramidEncoder) -> FeaturePyramid:
    """
    Args:
        image: [N, 3, H, W] with H, W multiples of 32

    Returns:
        FeaturePyramid: X1..X4 at strides 4, 8, 16, 32
    """
    if image.ndim != 4 or image.shape[1] != encoder.in_channels:
        raise ShapeError(f"{encoder.name}: expected [N, {encoder.in_channels}, H, W] input, got {image.shape}")
    height, width = image.shape[2], image.shape[3]
    if height % SIZE_MULTIPLE or width % SIZE_MULTIPLE:
        raise ShapeError(f"{encoder.name}: input size {height}x{width} must be a multiple of {SIZE_MULTIPLE}")
    levels = []
    x = image
    for stage in encoder.stages:
        x = stage(x)
        levels.append(x)
    return FeaturePyramid(*levels)


def encoder_param_count(channels: Sequence[int], in_channels: int = IMAGE_CHANNELS) -> int:
    widths = (in_channels,) + tuple(channels)
    total = 0
    for s in range(4):
        total += ConvBNReLU.param_count(widths[s], widths[s + 1], 3)
        total += ConvBNReLU.param_count(widths[s + 1], widths[s + 1], 3)
    return total


def encoder_macs(channels: Sequence[int], height: int, width: int, in_channels: int = IMAGE_CHANNELS) -> int:
    widths = (in_channels,) + tuple(channels)
    total = 9 * in_channels * widths[1] * (height // 2) * (width // 2)
    total += 9 * widths[1] * widths[1] * (height // 4) * (width // 4)
    for s in range(1, 4):
        stride = 4 * 2 ** s
        pixels = (height // stride) * (width // stride)
        total += 9 * widths[s] * widths[s + 1] * pixels + 9 * widths[s + 1] * widths[s + 1] * pixels
    return total
