"""
Layer Module
Parameter-owning wrappers around the functional operations
"""

from abc import ABC, abstractmethod
from typing import Optional

from config.macmd_config import LN_EPSILON
from src.numerics import functional as F
from src.numerics.params import ParamKind, ParamStore
from src.numerics.tensor import Tensor
from src.utils.errors import ShapeError


class Module(ABC):
    """
    Abstract base class for every network block

    A module owns the parameters registered under its dotted name inside a
    shared ParamStore. Sub-modules extend the name with their own segment.
    """

    def __init__(self, store: ParamStore, name: str):
        """
        Args:
            store: ParamStore receiving this module's parameters
            name: Dotted path prefix, e.g. 'decoder.mcag1'
        """
        self.store = store
        self.name = name

    def scoped(self, local: str) -> str:
        return f"{self.name}.{local}" if self.name else local

    def _param(self, local: str, shape: tuple, kind: ParamKind,
               fan_in: Optional[int] = None, fill: Optional[float] = None) -> Tensor:
        return self.store.create(self.scoped(local), shape, kind, fan_in=fan_in, fill=fill)

    def num_parameters(self) -> int:
        """Stored element count under this module's prefix"""
        return self.store.num_elements(self.name + ".")

    @abstractmethod
    def forward(self, *args, **kwargs):
        pass

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def __repr__(self) -> str:
        return f"{type(self).__name__}('{self.name}')"


class Conv2d(Module):
    """2-D convolution with He-initialized kernel and optional bias"""

    def __init__(self, store: ParamStore, name: str, in_channels: int, out_channels: int,
                 kernel_size: int = 1, stride: int = 1, dilation: int = 1, padding: int = 0,
                 groups: int = 1, bias: bool = True, weight_fill: Optional[float] = None):
        super().__init__(store, name)
        if in_channels % groups or out_channels % groups:
            raise ShapeError(f"{name}: channels {in_channels}->{out_channels} not divisible by groups={groups}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.dilation = dilation
        self.padding = padding
        self.groups = groups

        fan_in = (in_channels // groups) * kernel_size * kernel_size
        self.weight = self._param("weight", (out_channels, in_channels // groups, kernel_size, kernel_size),
                                  ParamKind.WEIGHT, fan_in=fan_in, fill=weight_fill)
        self.bias = self._param("bias", (out_channels,), ParamKind.BIAS) if bias else None

    @staticmethod
    def param_count(in_channels: int, out_channels: int, kernel_size: int = 1,
                    groups: int = 1, bias: bool = True) -> int:
        return out_channels * (in_channels // groups) * kernel_size * kernel_size + (out_channels if bias else 0)

    @staticmethod
    def mac_count(in_channels: int, out_channels: int, kernel_size: int, out_h: int, out_w: int,
                  groups: int = 1) -> int:
        return out_channels * (in_channels // groups) * kernel_size * kernel_size * out_h * out_w

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"{self.name}: expected {self.in_channels} input channels, got shape {x.shape}")
        try:
            return F.conv2d(x, self.weight, self.bias, stride=self.stride, dilation=self.dilation,
                            padding=self.padding, groups=self.groups)
        except ShapeError as err:
            raise ShapeError(f"{self.name}: {err}") from err


class BatchNorm2d(Module):
    """Batch normalization with gain/bias parameters and a registered NormState"""

    def __init__(self, store: ParamStore, name: str, channels: int):
        super().__init__(store, name)
        self.channels = channels
        self.gain = self._param("gain", (channels,), ParamKind.NORM_GAIN)
        self.bias = self._param("bias", (channels,), ParamKind.NORM_BIAS)
        self.state = store.create_norm_state(name, channels)

    @staticmethod
    def param_count(channels: int) -> int:
        return 2 * channels

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"{self.name}: expected {self.channels} channels, got shape {x.shape}")
        return F.batch_norm(x, self.gain, self.bias, self.state)


class LayerNorm(Module):
    def __init__(self, store: ParamStore, name: str, features: int, eps: float = LN_EPSILON):
        super().__init__(store, name)
        self.features = features
        self.eps = eps
        self.gain = self._param("gain", (features,), ParamKind.NORM_GAIN)
        self.bias = self._param("bias", (features,), ParamKind.NORM_BIAS)

    def forward(self, x: Tensor) -> Tensor:
        try:
            return F.layer_norm(x, self.gain, self.bias, self.eps)
        except ShapeError as err:
            raise ShapeError(f"{self.name}: {err}") from err


class Linear(Module):
    """Token-wise affine map [..., Din] -> [..., Dout]"""

    def __init__(self, store: ParamStore, name: str, in_features: int, out_features: int,
                 bias: bool = False, weight_fill: Optional[float] = None):
        super().__init__(store, name)
        self.in_features = in_features
        self.out_features = out_features
        self.weight = self._param("weight", (out_features, in_features), ParamKind.WEIGHT,
                                  fan_in=in_features, fill=weight_fill)
        self.bias = self._param("bias", (out_features,), ParamKind.BIAS) if bias else None

    @staticmethod
    def param_count(in_features: int, out_features: int, bias: bool = False) -> int:
        return in_features * out_features + (out_features if bias else 0)

    def forward(self, x: Tensor) -> Tensor:
        try:
            return F.linear(x, self.weight, self.bias)
        except ShapeError as err:
            raise ShapeError(f"{self.name}: {err}") from err


class ConvBNReLU(Module):
    """Convolution followed by batch normalization and ReLU"""

    def __init__(self, store: ParamStore, name: str, in_channels: int, out_channels: int,
                 kernel_size: int = 1, stride: int = 1, padding: int = 0, bias: bool = True):
        super().__init__(store, name)
        self.conv = Conv2d(store, self.scoped("conv"), in_channels, out_channels, kernel_size,
                           stride=stride, padding=padding, bias=bias)
        self.bn = BatchNorm2d(store, self.scoped("bn"), out_channels)

    @staticmethod
    def param_count(in_channels: int, out_channels: int, kernel_size: int = 1, bias: bool = True) -> int:
        return Conv2d.param_count(in_channels, out_channels, kernel_size, bias=bias) + 2 * out_channels

    def forward(self, x: Tensor) -> Tensor:
        return F.relu(self.bn(self.conv(x)))
