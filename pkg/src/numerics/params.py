"""
Parameter Store
Named learnable tensors, their initialization rules and normalization running statistics
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from config.macmd_config import BN_EPSILON, BN_MOMENTUM, CHANNEL_MIX_INIT_MU
from src.numerics.rng import make_rng
from src.numerics.tensor import Tensor
from src.utils.errors import ConfigError

logger = logging.getLogger(__name__)


class ParamKind(Enum):
    """What a parameter is; decides its initialization"""
    WEIGHT = "weight"
    BIAS = "bias"
    NORM_GAIN = "norm_gain"
    NORM_BIAS = "norm_bias"
    MIX_COEFFICIENT = "mix_coefficient"


class NormMode(Enum):
    TRAIN = "train"
    EVAL = "eval"


@dataclass
class Parameter:
    """
    A learnable tensor registered under a unique dotted path

    Attributes:
        name: Path such as 'decoder.mcag1.hdconv.branch0.weight'
        value: Tensor with requires_grad=True
        kind: Initialization class
    """

    name: str
    value: Tensor
    kind: ParamKind

    @property
    def size(self) -> int:
        return int(self.value.data.size)


@dataclass
class NormState:
    """
    Running statistics of one batch-normalization layer

    Attributes:
        running_mean: Per-channel mean estimate
        running_var: Per-channel variance estimate (population)
        momentum: Weight of the newest batch statistic
        epsilon: Variance floor
        mode: TRAIN uses batch statistics, EVAL uses the running ones
    """

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    epsilon: float = BN_EPSILON
    mode: NormMode = NormMode.TRAIN

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError(f"batch-norm epsilon must be positive, got {self.epsilon}")
        if not 0.0 < self.momentum < 1.0:
            raise ConfigError(f"batch-norm momentum must lie in (0, 1), got {self.momentum}")
        if np.any(self.running_var < 0):
            raise ConfigError("batch-norm running variance must be non-negative")

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32, **kwargs) -> "NormState":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype), **kwargs)

    def update(self, batch_mean: np.ndarray, batch_var: np.ndarray):
        m = self.momentum
        self.running_mean = ((1.0 - m) * self.running_mean + m * batch_mean).astype(self.running_mean.dtype)
        self.running_var = ((1.0 - m) * self.running_var + m * batch_var).astype(self.running_var.dtype)


class ParamStore:
    """
    Registry of every parameter and norm state of a model

    Weights are drawn He-normal from a Philox stream named after the
    parameter, so a parameter's initial value depends only on (seed, name).
    """

    def __init__(self, seed: int = 0, dtype=np.float32):
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self._params: Dict[str, Parameter] = {}
        self._norms: Dict[str, NormState] = {}

    # ------------------------------------------------------------------ #
    #  Registration                                                      #
    # ------------------------------------------------------------------ #

    def create(self, name: str, shape: Tuple[int, ...], kind: ParamKind,
               fan_in: Optional[int] = None, fill: Optional[float] = None) -> Tensor:
        """
        Register and initialize a parameter

        Args:
            name: Unique dotted path
            shape: Tensor shape
            kind: Initialization class
            fan_in: Inputs per output unit (required for weights)
            fill: Constant overriding the kind's rule (e.g. 0 for W_v)

        Returns:
            Tensor: The parameter value (requires_grad=True)
        """
        if name in self._params or name in self._norms:
            raise ConfigError(f"duplicate parameter name '{name}'")

        if fill is not None:
            data = np.full(shape, fill, dtype=self.dtype)
        elif kind is ParamKind.WEIGHT:
            if not fan_in:
                raise ConfigError(f"weight '{name}' needs a positive fan_in")
            rng = make_rng(self.seed, name)
            data = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(self.dtype)
        elif kind is ParamKind.NORM_GAIN:
            data = np.ones(shape, dtype=self.dtype)
        elif kind is ParamKind.MIX_COEFFICIENT:
            data = np.full(shape, CHANNEL_MIX_INIT_MU, dtype=self.dtype)
        else:
            data = np.zeros(shape, dtype=self.dtype)

        tensor = Tensor(data, requires_grad=True)
        self._params[name] = Parameter(name, tensor, kind)
        return tensor

    def create_norm_state(self, name: str, channels: int) -> NormState:
        if name in self._norms or name in self._params:
            raise ConfigError(f"duplicate norm state name '{name}'")
        state = NormState.fresh(channels, dtype=self.dtype)
        self._norms[name] = state
        return state

    # ------------------------------------------------------------------ #
    #  Access                                                            #
    # ------------------------------------------------------------------ #

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def parameters(self) -> List[Parameter]:
        return list(self._params.values())

    def norm_states(self) -> Dict[str, NormState]:
        return dict(self._norms)

    def num_elements(self, prefix: str = "") -> int:
        """Learnable element count of every parameter under `prefix`"""
        return sum(p.size for p in self._params.values() if p.name.startswith(prefix))

    # ------------------------------------------------------------------ #
    #  State                                                             #
    # ------------------------------------------------------------------ #

    def zero_grad(self):
        for param in self._params.values():
            param.value.grad = None

    def fill_missing_grads(self):
        for param in self._params.values():
            if param.value.grad is None:
                param.value.grad = np.zeros_like(param.value.data)

    def set_mode(self, mode: NormMode):
        for state in self._norms.values():
            state.mode = mode

    def astype(self, dtype) -> "ParamStore":
        """Convert every parameter and running statistic in place"""
        self.dtype = np.dtype(dtype)
        for param in self._params.values():
            param.value.data = param.value.data.astype(self.dtype)
            param.value.grad = None
        for state in self._norms.values():
            state.running_mean = state.running_mean.astype(self.dtype)
            state.running_var = state.running_var.astype(self.dtype)
        return self

    def state_records(self) -> List[Tuple[str, np.ndarray]]:
        """Every stored array in registration order, norm statistics last"""
        records = [(p.name, p.value.data) for p in self._params.values()]
        for name, state in self._norms.items():
            records.append((f"{name}.running_mean", state.running_mean))
            records.append((f"{name}.running_var", state.running_var))
        return records

    def assign(self, name: str, array: np.ndarray):
        """Overwrite one stored array (parameter or running statistic) by record name"""
        if name in self._params:
            self._params[name].value.data = np.asarray(array, dtype=self.dtype).copy()
            return
        base, _, stat = name.rpartition(".")
        if base in self._norms and stat in ("running_mean", "running_var"):
            setattr(self._norms[base], stat, np.asarray(array, dtype=self.dtype).copy())
            return
        raise KeyError(name)

    def summary(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for kind in ParamKind:
            counts[kind.value] = sum(p.size for p in self._params.values() if p.kind is kind)
        counts["total"] = sum(counts.values())
        return counts
