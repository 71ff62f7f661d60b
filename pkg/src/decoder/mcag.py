"""
MCAG Module
Multi-dilated contextual attention gate over one encoder stage
"""

from typing import Tuple

from src.decoder.hdconv import HDConvLayer, hdconv_macs, hdconv_param_count
from src.numerics import functional as F
from src.numerics.layers import BatchNorm2d, Conv2d, Module
from src.numerics.params import ParamStore
from src.numerics.tensor import Tensor
from src.utils.errors import ShapeError


class McagBlock(Module):
    """
    Spatial gate shared across channels

    x1 = BN(HDConv(x)); alpha = sigmoid(BN(Conv1x1_{C->1}(ReLU(x1)))); out = x1 * alpha
    """

    def __init__(self, store: ParamStore, name: str, channels: int):
        super().__init__(store, name)
        self.channels = channels
        self.hdconv = HDConvLayer(store, self.scoped("hdconv"), channels, channels)
        self.bn1 = BatchNorm2d(store, self.scoped("bn1"), channels)
        self.attn_conv = Conv2d(store, self.scoped("attn_conv"), channels, 1)
        self.bn2 = BatchNorm2d(store, self.scoped("bn2"), 1)

    def gate(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        """
        Returns:
            tuple: (x1 [N,C,H,W], alpha [N,1,H,W])
        """
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"{self.name}: expected {self.channels} channels, got shape {x.shape}")
        x1 = self.bn1(self.hdconv(x))
        alpha = F.sigmoid(self.bn2(self.attn_conv(F.relu(x1))))
        return x1, alpha

    def forward(self, x: Tensor) -> Tensor:
        x1, alpha = self.gate(x)
        return x1 * alpha


def mcag_forward(x: Tensor, block: McagBlock) -> Tensor:
    return block(x)


def mcag_param_count(channels: int) -> int:
    """HDConv with bias + bn1 + attn conv C->1 with bias + bn2 = 9C^2 + 4C + 3"""
    return hdconv_param_count(channels, channels) + 2 * channels + (channels + 1) + 2


def mcag_macs(channels: int, height: int, width: int) -> int:
    return hdconv_macs(channels, channels, height, width) + channels * height * width
