"""
Loss Module
Cross-entropy + Dice composite loss with deep supervision
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from config.macmd_config import (
    BINARY_ALPHA, BINARY_BETA, DICE_SMOOTH, MULTICLASS_ALPHA, MULTICLASS_BETA,
)
from src.numerics import functional as F
from src.numerics.tensor import Tensor
from src.utils.errors import ConfigError, DataError, ShapeError


@dataclass
class LossWeights:
    """
    Composite loss weights: alpha * CE + beta * Dice

    Attributes:
        alpha: Cross-entropy weight (>= 0)
        beta: Dice weight (>= 0)
    """

    alpha: float
    beta: float

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError(f"loss weights must be non-negative, got alpha={self.alpha}, beta={self.beta}")
        if self.alpha == 0 and self.beta == 0:
            raise ConfigError("loss weights alpha and beta cannot both be zero")

    @classmethod
    def for_classes(cls, num_classes: int) -> "LossWeights":
        """alpha = beta = 1 for binary tasks, 0.4 / 0.6 for multi-class"""
        if num_classes <= 2:
            return cls(BINARY_ALPHA, BINARY_BETA)
        return cls(MULTICLASS_ALPHA, MULTICLASS_BETA)


def label_classes(num_classes: int) -> int:
    """Distinct label values: the K = 1 sigmoid path still labels {0, 1}"""
    return max(num_classes, 2)


def check_labels(logits: Tensor, labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if logits.ndim != 4:
        raise ShapeError(f"logits must be [N, K, H, W], got {logits.shape}")
    n, k, h, w = logits.shape
    if labels.shape != (n, h, w):
        raise ShapeError(f"label shape {labels.shape} does not match logits {(n, h, w)}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise DataError(f"labels must be integers, got dtype {labels.dtype}")
    limit = label_classes(k)
    if labels.size and (labels.min() < 0 or labels.max() >= limit):
        bad = labels.max() if labels.max() >= limit else labels.min()
        raise DataError(f"label value {int(bad)} outside 0..{limit - 1} for K={k}")
    return labels


def one_hot(labels: np.ndarray, num_classes: int, dtype=np.float32) -> np.ndarray:
    """[N, H, W] integer labels -> [N, K, H, W]"""
    return np.eye(num_classes, dtype=dtype)[labels].transpose(0, 3, 1, 2)


def ce_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean per-pixel cross entropy (binary cross entropy with logits when K = 1)"""
    labels = check_labels(logits, labels)
    n, k, h, w = logits.shape
    if k == 1:
        return F.binary_cross_entropy_with_logits(logits.reshape(n, h, w), labels).mean()
    target = one_hot(labels, k, logits.dtype)
    picked = (F.log_softmax(logits, axis=1) * target).sum()
    return picked * (-1.0 / (n * h * w))


def class_probabilities(logits: Tensor) -> Tensor:
    return F.sigmoid(logits) if logits.shape[1] == 1 else F.softmax(logits, axis=1)


def soft_dice(probs: Tensor, target: np.ndarray, eps: float = DICE_SMOOTH) -> Tensor:
    """
    Per-class soft Dice over batch and pixels

    Args:
        probs: [N, K, H, W] class probabilities
        target: [N, K, H, W] one-hot truth
        eps: Additive smoothing

    Returns:
        Tensor: [K] values (2*sum(p*y) + eps) / (sum(p) + sum(y) + eps)
    """
    target = np.asarray(target, dtype=probs.dtype)
    if target.shape != probs.shape:
        raise ShapeError(f"dice target shape {target.shape} != probabilities {probs.shape}")
    axes = (0, 2, 3)
    intersection = (probs * target).sum(axis=axes)
    denominator = probs.sum(axis=axes) + target.sum(axis=axes)
    return (intersection * 2.0 + eps) / (denominator + eps)


def dice_loss(logits: Tensor, labels: np.ndarray, eps: float = DICE_SMOOTH) -> Tensor:
    """1 - mean soft Dice over all K classes, background included"""
    labels = check_labels(logits, labels)
    k = logits.shape[1]
    if k == 1:
        target = labels[:, None].astype(logits.dtype)
    else:
        target = one_hot(labels, k, logits.dtype)
    return 1.0 - soft_dice(class_probabilities(logits), target, eps).mean()


def composite_loss(logits: Tensor, labels: np.ndarray, weights: LossWeights) -> Tensor:
    return ce_loss(logits, labels) * weights.alpha + dice_loss(logits, labels) * weights.beta


def total_loss(maps: Sequence[Tensor], labels: np.ndarray, weights: LossWeights) -> Tensor:
    """Unweighted sum of the composite loss over the three prediction maps"""
    if len(maps) != 3:
        raise ShapeError(f"total_loss expects exactly three prediction maps, got {len(maps)}")
    total = composite_loss(maps[0], labels, weights)
    for logits in maps[1:]:
        total = total + composite_loss(logits, labels, weights)
    return total
