"""
Training Configuration
Hyperparameters for one training run, persisted as a YAML sidecar next to the checkpoint
"""

from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Tuple

import yaml

from config.macmd_config import (
    DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_IMAGE_SIZE, DEFAULT_SEED, DEFAULT_VAL_FRACTION,
    LEARNING_RATE, LEARNING_RATE_MIN, MEAB_REDUCTION, SIZE_MULTIPLE, TOY_CHANNELS, WEIGHT_DECAY,
)
from src.decoder.macmd import ModelConfig
from src.objective.losses import LossWeights
from src.utils.errors import ConfigError


def sidecar_path(checkpoint: str) -> Path:
    return Path(f"{checkpoint}.yaml")


def history_path(checkpoint: str) -> Path:
    return Path(f"{checkpoint}.history.tsv")


@dataclass
class TrainConfig:
    """
    Everything needed to reproduce a training run

    alpha / beta left as None resolve to the class-count defaults.
    """

    checkpoint: str = "macmd.ckpt"
    seed: int = DEFAULT_SEED
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    lr: float = LEARNING_RATE
    lr_min: float = LEARNING_RATE_MIN
    weight_decay: float = WEIGHT_DECAY
    alpha: Optional[float] = None
    beta: Optional[float] = None
    num_classes: int = 3
    channels: Tuple[int, int, int, int] = TOY_CHANNELS
    image_size: int = DEFAULT_IMAGE_SIZE
    meab_reduction: int = MEAB_REDUCTION
    val_fraction: float = DEFAULT_VAL_FRACTION
    hflip: bool = False
    use_mcag_apm: bool = True
    use_msccm: bool = True
    use_meab: bool = True

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if not 0 <= self.lr_min <= self.lr:
            raise ConfigError(f"lr_min must lie in [0, lr], got {self.lr_min}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight decay must be non-negative, got {self.weight_decay}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.image_size <= 0 or self.image_size % SIZE_MULTIPLE:
            raise ConfigError(f"image size {self.image_size} must be a positive multiple of {SIZE_MULTIPLE}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")
        # validates alpha/beta early
        self.loss_weights()
        # validates the architecture early
        self.model_config()

    def loss_weights(self) -> LossWeights:
        defaults = LossWeights.for_classes(self.num_classes)
        return LossWeights(defaults.alpha if self.alpha is None else self.alpha,
                           defaults.beta if self.beta is None else self.beta)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            channels=self.channels,
            num_classes=self.num_classes,
            meab_reduction=self.meab_reduction,
            use_mcag_apm=self.use_mcag_apm,
            use_msccm=self.use_msccm,
            use_meab=self.use_meab,
            seed=self.seed,
        )

    def to_dict(self) -> dict:
        data = asdict(self)
        data["channels"] = list(self.channels)
        return data

    def to_yaml(self, path) -> Path:
        path = Path(path)
        with open(path, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=False)
        return path

    @classmethod
    def from_yaml(cls, path) -> "TrainConfig":
        with open(path) as f:
            data = yaml.safe_load(f) or {}
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown training config keys in {path}: {unknown}")
        return cls(**data)
