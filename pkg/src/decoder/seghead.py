"""
SegHead Module
Decoding stages and the fusion block
"""

from typing import Optional, Tuple

from config.macmd_config import SEGHEAD_DW_KERNEL
from src.numerics import functional as F
from src.numerics.layers import BatchNorm2d, Conv2d, ConvBNReLU, Module
from src.numerics.params import ParamStore
from src.numerics.tensor import Tensor
from src.utils.errors import ShapeError


class SegHeadBlock(Module):
    """
    upsample -> point-op 1x1 (Cin->Cin) -> pointwise 1x1 (Cin->Cout)
    -> depthwise 9x9 (Cout, padding 4) -> BN -> ReLU
    """

    def __init__(self, store: ParamStore, name: str, in_channels: int, out_channels: int,
                 scale: int = 2):
        super().__init__(store, name)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.scale = scale
        self.point_op = Conv2d(store, self.scoped("point_op"), in_channels, in_channels)
        self.pointwise = Conv2d(store, self.scoped("pointwise"), in_channels, out_channels)
        self.depthwise = Conv2d(store, self.scoped("depthwise"), out_channels, out_channels,
                                kernel_size=SEGHEAD_DW_KERNEL, padding=SEGHEAD_DW_KERNEL // 2,
                                groups=out_channels)
        self.bn = BatchNorm2d(store, self.scoped("bn"), out_channels)

    def forward(self, x: Tensor, size: Optional[Tuple[int, int]] = None) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"{self.name}: expected {self.in_channels} input channels, got shape {x.shape}")
        height, width = size or (x.shape[2] * self.scale, x.shape[3] * self.scale)
        up = F.bilinear_upsample(x, height, width)
        out = self.depthwise(self.pointwise(self.point_op(up)))
        return F.relu(self.bn(out))


def seghead_param_count(in_channels: int, out_channels: int) -> int:
    k2 = SEGHEAD_DW_KERNEL * SEGHEAD_DW_KERNEL
    return (in_channels * in_channels + in_channels
            + in_channels * out_channels + out_channels
            + k2 * out_channels + out_channels
            + 2 * out_channels)


def seghead_macs(in_channels: int, out_channels: int, out_h: int, out_w: int) -> int:
    k2 = SEGHEAD_DW_KERNEL * SEGHEAD_DW_KERNEL
    return (in_channels * in_channels + in_channels * out_channels + k2 * out_channels) * out_h * out_w


class FusionBlock(Module):
    """1x1 (2C -> C) + BN + ReLU, then 3x3 (C -> C) + BN + ReLU"""

    def __init__(self, store: ParamStore, name: str, in_channels: int, channels: int):
        super().__init__(store, name)
        self.reduce = ConvBNReLU(store, self.scoped("reduce"), in_channels, channels)
        self.refine = ConvBNReLU(store, self.scoped("refine"), channels, channels, kernel_size=3, padding=1)

    def forward(self, x: Tensor) -> Tensor:
        return self.refine(self.reduce(x))


def fusion_param_count(in_channels: int, channels: int) -> int:
    return ConvBNReLU.param_count(in_channels, channels) + ConvBNReLU.param_count(channels, channels, 3)


def fusion_macs(in_channels: int, channels: int, height: int, width: int) -> int:
    return (in_channels * channels + 9 * channels * channels) * height * width
