"""
MEAB Module
Two HDConv stacks refined by channel attention then spatial attention
"""

from config.macmd_config import MEAB_REDUCTION, MEAB_SPATIAL_KERNEL
from src.decoder.hdconv import HDConvLayer, hdconv_macs, hdconv_param_count
from src.numerics import functional as F
from src.numerics.layers import BatchNorm2d, Conv2d, Linear, Module
from src.numerics.params import ParamStore
from src.numerics.tensor import Tensor, concat, reduce_max
from src.utils.errors import ConfigError, ShapeError


class MeabBlock(Module):
    """
    u  = ReLU(BN(HD2(ReLU(BN(HD1(x))))))
    u' = u * sigmoid(MLP(GAP(u)))                      channel gate [N,C,1,1]
    y  = u' * sigmoid(Conv7x7([max_c u', mean_c u']))  spatial gate [N,1,H,W]
    """

    def __init__(self, store: ParamStore, name: str, channels: int, reduction: int = MEAB_REDUCTION):
        super().__init__(store, name)
        if reduction < 1 or channels % reduction:
            raise ConfigError(f"{name}: channels {channels} not divisible by reduction {reduction}")
        self.channels = channels
        self.reduction = reduction
        hidden = channels // reduction

        self.hd1 = HDConvLayer(store, self.scoped("hd1"), channels, channels)
        self.bn1 = BatchNorm2d(store, self.scoped("bn1"), channels)
        self.hd2 = HDConvLayer(store, self.scoped("hd2"), channels, channels)
        self.bn2 = BatchNorm2d(store, self.scoped("bn2"), channels)
        self.ca_fc1 = Linear(store, self.scoped("ca_fc1"), channels, hidden, bias=True)
        self.ca_fc2 = Linear(store, self.scoped("ca_fc2"), hidden, channels, bias=True)
        self.sa_conv = Conv2d(store, self.scoped("sa_conv"), 2, 1, kernel_size=MEAB_SPATIAL_KERNEL,
                              padding=MEAB_SPATIAL_KERNEL // 2)

    def features(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"{self.name}: expected {self.channels} channels, got shape {x.shape}")
        u = F.relu(self.bn1(self.hd1(x)))
        return F.relu(self.bn2(self.hd2(u)))

    def channel_gate(self, u: Tensor) -> Tensor:
        n, c = u.shape[0], u.shape[1]
        pooled = F.global_avg_pool(u).reshape(n, c)
        hidden = F.relu(self.ca_fc1(pooled))
        return F.sigmoid(self.ca_fc2(hidden)).reshape(n, c, 1, 1)

    def spatial_gate(self, u: Tensor) -> Tensor:
        descriptor = concat([reduce_max(u, axis=1, keepdims=True), u.mean(axis=1, keepdims=True)], axis=1)
        return F.sigmoid(self.sa_conv(descriptor))

    def forward(self, x: Tensor) -> Tensor:
        u = self.features(x)
        refined = u * self.channel_gate(u)
        return refined * self.spatial_gate(refined)


def meab_forward(x: Tensor, block: MeabBlock) -> Tensor:
    return block(x)


def meab_param_count(channels: int, reduction: int = MEAB_REDUCTION) -> int:
    hidden = channels // reduction
    hdconvs = 2 * hdconv_param_count(channels, channels)
    norms = 4 * channels
    mlp = channels * hidden + hidden + hidden * channels + channels
    spatial = MEAB_SPATIAL_KERNEL * MEAB_SPATIAL_KERNEL * 2 + 1
    return hdconvs + norms + mlp + spatial


def meab_macs(channels: int, height: int, width: int, reduction: int = MEAB_REDUCTION) -> int:
    hidden = channels // reduction
    spatial = MEAB_SPATIAL_KERNEL * MEAB_SPATIAL_KERNEL * 2 * height * width
    return 2 * hdconv_macs(channels, channels, height, width) + 2 * channels * hidden + spatial
