"""
MSCCM Module
Multi-scale cross-channel mixer: pixel-token channel mixing with quad-directional token shift
"""

from typing import List, Sequence, Tuple

import numpy as np

from config.macmd_config import CHANNEL_MIX_HIDDEN_RATIO
from src.numerics import functional as F
from src.numerics.layers import Conv2d, LayerNorm, Linear, Module
from src.numerics.params import ParamKind, ParamStore
from src.numerics.tensor import Tensor, concat, make_result, split
from src.utils.errors import ShapeError


def qshift(x: Tensor) -> Tensor:
    """
    Quad-directional token shift with zero fill

    Channel quarters 0..3 take the value of the left, right, upper and lower
    neighbour respectively.
    """
    if x.ndim != 4:
        raise ShapeError(f"qshift expects [N, D, H, W], got shape {x.shape}")
    d = x.shape[1]
    if d % 4:
        raise ShapeError(f"qshift: channel count {d} is not divisible by 4")
    q = d // 4
    src = x.data
    out = np.zeros_like(src)
    out[:, 0 * q:1 * q, :, 1:] = src[:, 0 * q:1 * q, :, :-1]
    out[:, 1 * q:2 * q, :, :-1] = src[:, 1 * q:2 * q, :, 1:]
    out[:, 2 * q:3 * q, 1:, :] = src[:, 2 * q:3 * q, :-1, :]
    out[:, 3 * q:4 * q, :-1, :] = src[:, 3 * q:4 * q, 1:, :]

    def backward_fn(g):
        gx = np.zeros_like(g)
        gx[:, 0 * q:1 * q, :, :-1] = g[:, 0 * q:1 * q, :, 1:]
        gx[:, 1 * q:2 * q, :, 1:] = g[:, 1 * q:2 * q, :, :-1]
        gx[:, 2 * q:3 * q, :-1, :] = g[:, 2 * q:3 * q, 1:, :]
        gx[:, 3 * q:4 * q, 1:, :] = g[:, 3 * q:4 * q, :-1, :]
        return (gx,)

    return make_result(out, (x,), backward_fn)


def unfold(x: Tensor) -> Tensor:
    """[N, D, H, W] -> pixel tokens [N, H*W, D]"""
    n, d, h, w = x.shape
    return x.reshape(n, d, h * w).transpose(0, 2, 1)


def fold(tokens: Tensor, spatial: Tuple[int, int]) -> Tensor:
    """Pixel tokens [N, H*W, D] -> [N, D, H, W]"""
    n, t, d = tokens.shape
    h, w = spatial
    if t != h * w:
        raise ShapeError(f"fold: {t} tokens cannot tile a {h}x{w} grid")
    return tokens.transpose(0, 2, 1).reshape(n, d, h, w)


class ChannelMixCore(Module):
    """
    Token-shift channel mix over D features with a 2D hidden width

    W_v starts at zero so the surrounding residual is the identity at init.
    """

    def __init__(self, store: ParamStore, name: str, features: int):
        super().__init__(store, name)
        if features % 4:
            raise ShapeError(f"{name}: token width {features} must be divisible by 4 for the token shift")
        self.features = features
        hidden = CHANNEL_MIX_HIDDEN_RATIO * features
        self.norm = LayerNorm(store, self.scoped("norm"), features)
        self.mu_r = self._param("mu_r", (features,), ParamKind.MIX_COEFFICIENT)
        self.mu_k = self._param("mu_k", (features,), ParamKind.MIX_COEFFICIENT)
        self.receptance = Linear(store, self.scoped("receptance"), features, features)
        self.key = Linear(store, self.scoped("key"), features, hidden)
        self.value = Linear(store, self.scoped("value"), hidden, features, weight_fill=0.0)

    def forward(self, tokens: Tensor, spatial: Tuple[int, int]) -> Tensor:
        return channel_mix(tokens, self, spatial)


def channel_mix(tokens: Tensor, core: ChannelMixCore, spatial: Tuple[int, int]) -> Tensor:
    """
    r * v for pixel tokens; the caller adds the residual

    Args:
        tokens: [T, D] or [N, T, D] with T = H * W
        core: ChannelMixCore over D
        spatial: (H, W) of the token grid

    Returns:
        Tensor: Same shape as tokens
    """
    squeeze = tokens.ndim == 2
    if squeeze:
        tokens = tokens.reshape(1, *tokens.shape)
    n, t, d = tokens.shape
    h, w = spatial
    if t != h * w:
        raise ShapeError(f"{core.name}: {t} tokens do not match the {h}x{w} grid")
    if d != core.features:
        raise ShapeError(f"{core.name}: token width {d} != {core.features}")

    u = core.norm(tokens)
    shifted = unfold(qshift(fold(u, spatial)))
    xr = u * core.mu_r + shifted * (1.0 - core.mu_r)
    xk = u * core.mu_k + shifted * (1.0 - core.mu_k)
    r = F.sigmoid(core.receptance(xr))
    v = core.value(F.squared_relu(core.key(xk)))
    out = r * v
    return out.reshape(t, d) if squeeze else out


class MsccmBlock(Module):
    """
    Aligns stages 1-3 to the finest grid, mixes their concatenated channels
    per pixel with a residual, then restores each stage's width and size.
    """

    def __init__(self, store: ParamStore, name: str, in_channels: Sequence[int]):
        super().__init__(store, name)
        self.in_channels = tuple(in_channels)
        width = self.in_channels[0]
        self.width = width
        self.in_projs = [Conv2d(store, self.scoped(f"in_proj{i + 1}"), c, width)
                         for i, c in enumerate(self.in_channels)]
        self.mix = ChannelMixCore(store, self.scoped("mix"), width * len(self.in_channels))
        self.out_projs = [Conv2d(store, self.scoped(f"out_proj{i + 1}"), width, c)
                          for i, c in enumerate(self.in_channels)]

    def forward(self, features: Sequence[Tensor]) -> List[Tensor]:
        x_cat = msccm_align(features, self)
        spatial = (x_cat.shape[2], x_cat.shape[3])
        tokens = unfold(x_cat)
        mixed = tokens + channel_mix(tokens, self.mix, spatial)
        sizes = [(x.shape[2], x.shape[3]) for x in features]
        return msccm_restore(fold(mixed, spatial), self, sizes)


def msccm_align(features: Sequence[Tensor], block: MsccmBlock) -> Tensor:
    """Upsample stages 2..3 to stage-1 resolution, project each to C1, concatenate"""
    if len(features) != len(block.in_projs):
        raise ShapeError(f"{block.name}: expected {len(block.in_projs)} stages, got {len(features)}")
    for i in range(1, len(features)):
        prev, cur = features[i - 1].shape, features[i].shape
        if cur[2] * 2 != prev[2] or cur[3] * 2 != prev[3]:
            raise ShapeError(f"{block.name}: stage {i + 1} size {cur[2:]} does not nest in stage {i} size {prev[2:]}")
    height, width = features[0].shape[2], features[0].shape[3]
    aligned = [proj(F.bilinear_upsample(x, height, width)) for proj, x in zip(block.in_projs, features)]
    return concat(aligned, axis=1)


def msccm_restore(x_mix: Tensor, block: MsccmBlock, sizes: Sequence[Tuple[int, int]]) -> List[Tensor]:
    """
    Split into C1-wide groups, project each to its stage width, resize to its stage size

    Args:
        x_mix: [N, 3*C1, H1, W1]
        block: MsccmBlock
        sizes: Native (H, W) of each stage

    Returns:
        list: X'_1..X'_3
    """
    expected = block.width * len(block.out_projs)
    if x_mix.ndim != 4 or x_mix.shape[1] != expected:
        raise ShapeError(f"{block.name}: restore expects {expected} channels, got shape {x_mix.shape}")
    groups = split(x_mix, [block.width] * len(block.out_projs), axis=1)
    return [F.bilinear_resize(proj(g), h, w) for proj, g, (h, w) in zip(block.out_projs, groups, sizes)]


def channel_mix_param_count(features: int) -> int:
    hidden = CHANNEL_MIX_HIDDEN_RATIO * features
    return 2 * features + 2 * features + features * features + features * hidden + hidden * features


def msccm_param_count(in_channels: Sequence[int]) -> int:
    width = in_channels[0]
    projections = sum(2 * c * width + width + c for c in in_channels)
    return projections + channel_mix_param_count(width * len(in_channels))


def msccm_macs(in_channels: Sequence[int], height: int, width: int) -> int:
    """MACs at stage-1 resolution (H1, W1); both projections run on that grid"""
    c1 = in_channels[0]
    d = c1 * len(in_channels)
    hidden = CHANNEL_MIX_HIDDEN_RATIO * d
    tokens = height * width
    projections = 2 * sum(c * c1 for c in in_channels) * tokens
    return projections + tokens * (d * d + d * hidden + hidden * d)
