"""
HDConv Module
Four parallel dilated 3x3 convolutions with cyclic channel regrouping
"""

from typing import Sequence, Tuple

import numpy as np

from config.macmd_config import HDCONV_BRANCHES, HDCONV_DILATIONS, HDCONV_GROUP_MULTIPLE
from src.numerics.layers import Conv2d, Module
from src.numerics.params import ParamStore
from src.numerics.tensor import Tensor, concat, take_channels
from src.utils.errors import ConfigError


def cyclic_permutation(out_channels: int) -> np.ndarray:
    """
    Channel index mapping concatenated branch outputs to the regrouped layout

    The raw layout holds branch b in channels [b*Cout/4, (b+1)*Cout/4), each
    split into four sub-groups of Cout/16 channels. Output quarter j is
    built from sub-group (b + j) mod 4 of every branch b, in branch order.

    Args:
        out_channels: Cout, a multiple of 16

    Returns:
        np.ndarray: index such that regrouped = raw[:, index]
    """
    if out_channels <= 0 or out_channels % HDCONV_GROUP_MULTIPLE:
        raise ConfigError(f"HDConv output channels must be a positive multiple of "
                          f"{HDCONV_GROUP_MULTIPLE}, got {out_channels}")
    quarter = out_channels // HDCONV_BRANCHES
    sub = quarter // HDCONV_BRANCHES

    index = []
    for j in range(HDCONV_BRANCHES):
        for b in range(HDCONV_BRANCHES):
            start = b * quarter + ((b + j) % HDCONV_BRANCHES) * sub
            index.extend(range(start, start + sub))
    return np.asarray(index, dtype=np.int64)


class HDConvLayer(Module):
    """
    Hybrid dilated convolution Cin -> Cout

    Branch b is a 3x3 convolution Cin -> Cout/4 with dilation and padding
    equal to dilations[b] (HDCONV_DILATIONS unless given), so every branch
    preserves spatial size.
    """

    def __init__(self, store: ParamStore, name: str, in_channels: int, out_channels: int,
                 bias: bool = True, dilations: Sequence[int] = HDCONV_DILATIONS):
        super().__init__(store, name)
        dilations = tuple(int(d) for d in dilations)
        if len(dilations) != HDCONV_BRANCHES or min(dilations) < 1:
            raise ConfigError(f"{name}: expected {HDCONV_BRANCHES} positive dilations, got {dilations}")
        self.permutation = cyclic_permutation(out_channels)
        self.inverse_permutation = np.argsort(self.permutation)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.branches = [
            Conv2d(store, self.scoped(f"branch{b}"), in_channels, out_channels // HDCONV_BRANCHES,
                   kernel_size=3, dilation=d, padding=d, bias=bias)
            for b, d in enumerate(dilations)
        ]

    @property
    def dilations(self) -> Tuple[int, ...]:
        return tuple(branch.dilation for branch in self.branches)

    def raw_branches(self, x: Tensor) -> Tensor:
        """Concatenated branch outputs before regrouping"""
        return concat([branch(x) for branch in self.branches], axis=1)

    def forward(self, x: Tensor) -> Tensor:
        return take_channels(self.raw_branches(x), self.permutation)


def hdconv_forward(x: Tensor, layer: HDConvLayer) -> Tensor:
    return layer(x)


def hdconv_param_count(in_channels: int, out_channels: int, with_bias: bool = True) -> int:
    """9*Cin*Cout, plus Cout bias terms"""
    cyclic_permutation(out_channels)
    return 9 * in_channels * out_channels + (out_channels if with_bias else 0)


def hdconv_macs(in_channels: int, out_channels: int, height: int, width: int) -> int:
    return 9 * in_channels * out_channels * height * width
