"""
APM Module
Attention pooling modulation: cross-scale softmax fusion and bidirectional gating
"""

from typing import List, Sequence, Tuple

from config.macmd_config import APM_ATTN_REDUCTION
from src.numerics import functional as F
from src.numerics.layers import BatchNorm2d, Conv2d, ConvBNReLU, Module
from src.numerics.params import ParamStore
from src.numerics.tensor import Tensor, concat, narrow
from src.utils.errors import ConfigError, ShapeError


class ApmBlock(Module):
    """
    Projects every pyramid level to a common width C, fuses the levels with
    per-pixel scale weights and returns the averaged modulated context Y.

    attn1, attn2 and mod_conv are shared by all scales.
    """

    def __init__(self, store: ParamStore, name: str, in_channels: Sequence[int], channels: int):
        super().__init__(store, name)
        if channels % APM_ATTN_REDUCTION:
            raise ConfigError(f"{name}: common width {channels} must be divisible by {APM_ATTN_REDUCTION}")
        self.in_channels = tuple(in_channels)
        self.channels = channels
        hidden = channels // APM_ATTN_REDUCTION

        self.projections = [
            ConvBNReLU(store, self.scoped(f"proj{i + 1}"), c_in, channels)
            for i, c_in in enumerate(self.in_channels)
        ]
        self.attn1 = Conv2d(store, self.scoped("attn1"), channels, hidden)
        self.attn2 = Conv2d(store, self.scoped("attn2"), hidden, 1)
        self.mod_conv = Conv2d(store, self.scoped("mod_conv"), channels, channels)
        self.mod_bn = BatchNorm2d(store, self.scoped("mod_bn"), channels)

    def score(self, x: Tensor) -> Tensor:
        """Unnormalized scale score A [N,1,H,W]"""
        return self.attn2(F.relu(self.attn1(x)))

    def forward(self, features: Sequence[Tensor]) -> Tensor:
        aligned = apm_align(features, self)
        fused = apm_fuse(aligned, self)
        return apm_modulate(aligned, fused, self)


def check_pyramid(features: Sequence[Tensor], owner: str) -> Tuple[int, int]:
    """Each level must halve the previous one; returns the finest (H, W)"""
    for i in range(1, len(features)):
        prev, cur = features[i - 1].shape, features[i].shape
        if cur[2] * 2 != prev[2] or cur[3] * 2 != prev[3]:
            raise ShapeError(f"{owner}: level {i + 1} spatial size {cur[2:]} is not half of "
                             f"level {i} size {prev[2:]}")
    return features[0].shape[2], features[0].shape[3]


def apm_align(features: Sequence[Tensor], block: ApmBlock) -> List[Tensor]:
    """
    Project each level at its native resolution, then upsample to the finest level

    Returns:
        list: Four tensors [N, C, H1, W1]
    """
    if len(features) != len(block.projections):
        raise ShapeError(f"{block.name}: expected {len(block.projections)} pyramid levels, got {len(features)}")
    height, width = check_pyramid(features, block.name)
    return [F.bilinear_upsample(proj(x), height, width) for proj, x in zip(block.projections, features)]


def apm_scale_weights(aligned: Sequence[Tensor], block: ApmBlock) -> Tensor:
    """Softmax over the stacked scale axis: [N, S, H, W], per-pixel sum 1"""
    if len(aligned) < 1:
        raise ShapeError(f"{block.name}: scale fusion needs at least one input map")
    shape = aligned[0].shape
    for x in aligned[1:]:
        if x.shape != shape:
            raise ShapeError(f"{block.name}: aligned maps differ in shape, {x.shape} vs {shape}")
    return F.softmax(concat([block.score(x) for x in aligned], axis=1), axis=1)


def apm_fuse(aligned: Sequence[Tensor], block: ApmBlock) -> Tensor:
    """F = sum_i alpha_i * X_i with alpha_i broadcast over channels"""
    weights = apm_scale_weights(aligned, block)
    fused = None
    for i, x in enumerate(aligned):
        term = narrow(weights, 1, i, 1) * x
        fused = term if fused is None else fused + term
    return fused


def apm_modulate(aligned: Sequence[Tensor], fused: Tensor, block: ApmBlock) -> Tensor:
    """
    Y = mean_i(gamma_i * X_i) with
    gamma_i = ReLU(BN(mod_conv((X_i * sigmoid(F)) * (F * sigmoid(X_i)))))
    """
    gate_fused = F.sigmoid(fused)
    total = None
    for x in aligned:
        if x.shape != fused.shape:
            raise ShapeError(f"{block.name}: modulation shape mismatch {x.shape} vs {fused.shape}")
        f_mod = x * gate_fused
        x_mod = fused * F.sigmoid(x)
        gamma = F.relu(block.mod_bn(block.mod_conv(f_mod * x_mod)))
        z = gamma * x
        total = z if total is None else total + z
    return total / float(len(aligned))


def apm_param_count(in_channels: Sequence[int], channels: int) -> int:
    hidden = channels // APM_ATTN_REDUCTION
    projections = sum(c * channels + 3 * channels for c in in_channels)
    attention = channels * hidden + hidden + hidden + 1
    modulation = channels * channels + channels + 2 * channels
    return projections + attention + modulation


def apm_macs(in_channels: Sequence[int], channels: int, sizes: Sequence[Tuple[int, int]]) -> int:
    hidden = channels // APM_ATTN_REDUCTION
    height, width = sizes[0]
    align = sum(c * channels * h * w for c, (h, w) in zip(in_channels, sizes))
    per_scale = (channels * hidden + hidden + channels * channels) * height * width
    return align + len(in_channels) * per_scale
