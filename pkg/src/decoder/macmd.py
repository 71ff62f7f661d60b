"""
MACMD Model
Encoder plus the full decoder wiring with deep-supervision outputs
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from config.macmd_config import (
    APM_ATTN_REDUCTION, DEFAULT_SEED, HDCONV_GROUP_MULTIPLE, IMAGE_CHANNELS, MEAB_REDUCTION, TOY_CHANNELS,
)
from src.decoder.apm import ApmBlock
from src.decoder.encoder import FeaturePyramid, PyramidEncoder, encoder_forward
from src.decoder.mcag import McagBlock
from src.decoder.meab import MeabBlock
from src.decoder.msccm import MsccmBlock
from src.decoder.seghead import FusionBlock, SegHeadBlock
from src.numerics import functional as F
from src.numerics.layers import Conv2d
from src.numerics.params import NormMode, ParamStore
from src.numerics.tensor import Tensor, concat
from src.utils.errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    """
    Architecture of one MACMD network

    Attributes:
        channels: Encoder widths C1..C4
        num_classes: K (1 selects the sigmoid binary path)
        meab_reduction: Channel-attention ratio r
        use_mcag_apm / use_msccm / use_meab: Ablation toggles
        seed: Parameter initialization seed
    """

    channels: Tuple[int, int, int, int] = TOY_CHANNELS
    num_classes: int = 3
    meab_reduction: int = MEAB_REDUCTION
    in_channels: int = IMAGE_CHANNELS
    use_mcag_apm: bool = True
    use_msccm: bool = True
    use_meab: bool = True
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if len(self.channels) != 4:
            raise ConfigError(f"expected four channel widths, got {self.channels}")
        if any(c <= 0 for c in self.channels):
            raise ConfigError(f"channel widths must be positive, got {self.channels}")
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be >= 1, got {self.num_classes}")
        c1, c4 = self.channels[0], self.channels[3]
        if c1 % 2:
            raise ConfigError(f"C1={c1} must be even (SegHead4 halves it)")
        if self.use_mcag_apm:
            bad = [c for c in self.channels if c % HDCONV_GROUP_MULTIPLE]
            if bad:
                raise ConfigError(f"MCAG needs every width divisible by {HDCONV_GROUP_MULTIPLE}, got {bad}")
            if c1 % APM_ATTN_REDUCTION:
                raise ConfigError(f"APM needs C1 divisible by {APM_ATTN_REDUCTION}, got {c1}")
        if self.use_msccm and c1 % 4:
            raise ConfigError(f"MSCCM needs C1 divisible by 4, got {c1}")
        if self.use_meab:
            if c4 % HDCONV_GROUP_MULTIPLE:
                raise ConfigError(f"MEAB needs C4 divisible by {HDCONV_GROUP_MULTIPLE}, got {c4}")
            if self.meab_reduction < 1 or c4 % self.meab_reduction:
                raise ConfigError(f"MEAB needs C4={c4} divisible by reduction {self.meab_reduction}")

    @property
    def modules_label(self) -> str:
        parts = [name for name, on in (("MCAG+APM", self.use_mcag_apm), ("MSCCM", self.use_msccm),
                                       ("MEAB", self.use_meab)) if on]
        return "+".join(parts) or "baseline"


class MacmdModel:
    """
    MACMD segmentation network

    All parameters live in one ParamStore under 'encoder.*' and 'decoder.*'.
    forward(image) returns (p1, p2, p3): final, stage-3 and stage-2 maps,
    each resized to the input resolution.
    """

    def __init__(self, config: ModelConfig, store: Optional[ParamStore] = None, dtype=np.float32):
        self.config = config
        self.store = store if store is not None else ParamStore(seed=config.seed, dtype=dtype)
        c1, c2, c3, c4 = config.channels
        k = config.num_classes
        s = self.store

        self.encoder = PyramidEncoder(s, "encoder", config.channels, config.in_channels)

        self.mcag = []
        self.apm = None
        if config.use_mcag_apm:
            self.mcag = [McagBlock(s, f"decoder.mcag{i + 1}", c) for i, c in enumerate(config.channels)]
            self.apm = ApmBlock(s, "decoder.apm", config.channels, c1)
        self.msccm = MsccmBlock(s, "decoder.msccm", (c1, c2, c3)) if config.use_msccm else None
        self.meab = MeabBlock(s, "decoder.meab", c4, config.meab_reduction) if config.use_meab else None

        self.seghead1 = SegHeadBlock(s, "decoder.seghead1", c4, c3, scale=2)
        self.seghead2 = SegHeadBlock(s, "decoder.seghead2", 2 * c3, c2, scale=2)
        self.seghead3 = SegHeadBlock(s, "decoder.seghead3", 2 * c2, c1, scale=2)
        self.fusion = FusionBlock(s, "decoder.fusion", 2 * c1, c1)
        self.seghead4 = SegHeadBlock(s, "decoder.seghead4", c1, c1 // 2, scale=4)

        self.pred2 = Conv2d(s, "decoder.pred2", c2, k)
        self.pred3 = Conv2d(s, "decoder.pred3", c1, k)
        self.pred4 = Conv2d(s, "decoder.pred4", c1 // 2, k)

        logger.debug(f"MacmdModel built: {config.modules_label}, channels={config.channels}, "
                     f"K={k}, {self.num_parameters():,} parameters")

    def num_parameters(self) -> int:
        return self.store.num_elements()

    def train(self) -> "MacmdModel":
        self.store.set_mode(NormMode.TRAIN)
        return self

    def eval(self) -> "MacmdModel":
        self.store.set_mode(NormMode.EVAL)
        return self

    def forward(self, image: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
        pyramid = encoder_forward(image, self.encoder)
        return macmd_forward(pyramid, self, (image.shape[2], image.shape[3]))

    def __call__(self, image: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
        return self.forward(image)


def macmd_forward(pyramid: FeaturePyramid, model: MacmdModel,
                  out_size: Optional[Tuple[int, int]] = None) -> Tuple[Tensor, Tensor, Tensor]:
    """
    Decode a feature pyramid into three K-channel prediction maps

    Args:
        pyramid: X1..X4 matching the model's channel widths
        model: MacmdModel
        out_size: Output (H, W); defaults to 4x the stride-4 level

    Returns:
        tuple: (p1 final, p2 stage-3 tap, p3 stage-2 tap), each [N, K, H, W]
    """
    cfg = model.config
    for i, (got, want) in enumerate(zip(pyramid.channels, cfg.channels)):
        if got != want:
            raise ShapeError(f"decoder: pyramid level {i + 1} has {got} channels, model expects {want}")
    x1, x2, x3, x4 = pyramid.levels
    height, width = out_size or (4 * x1.shape[2], 4 * x1.shape[3])

    if cfg.use_mcag_apm:
        gated = [block(x) for block, x in zip(model.mcag, pyramid.levels)]
        context = model.apm(gated)
    else:
        gated, context = list(pyramid.levels), None

    if cfg.use_msccm:
        skip1, skip2, skip3 = model.msccm([x1, x2, x3])
    else:
        skip1, skip2, skip3 = x1, x2, x3

    deepest = model.meab(gated[3]) if cfg.use_meab else gated[3]

    d3 = model.seghead1(deepest, (x3.shape[2], x3.shape[3]))
    d2 = model.seghead2(concat([d3, skip3], axis=1), (x2.shape[2], x2.shape[3]))
    d1 = model.seghead3(concat([d2, skip2], axis=1), (x1.shape[2], x1.shape[3]))
    if context is not None:
        d1 = d1 + context
    fused = model.fusion(concat([d1, skip1], axis=1))
    d0 = model.seghead4(fused, (height, width))

    p1 = model.pred4(d0)
    p2 = F.bilinear_upsample(model.pred3(d1), height, width)
    p3 = F.bilinear_upsample(model.pred2(d2), height, width)
    return p1, p2, p3
