"""
Metrics Module
Dice similarity, 95th-percentile Hausdorff distance and pixel accuracy on label maps
"""

import math
from dataclasses import dataclass, field
from typing import List

import numpy as np
import pandas as pd
from scipy import ndimage
from scipy.spatial.distance import cdist

from src.utils.errors import ShapeError


@dataclass
class SegmentationMetrics:
    """
    Attributes:
        dsc_per_class: DSC of classes 0..K-1, pooled over the batch
        hd95_per_class: Mean HD95 over images per class (NaN when undefined everywhere)
        mean_dsc: DSC mean over foreground classes 1..K-1
        mean_hd95: HD95 mean over foreground classes, NaN ignored
        acc: Fraction of matching pixels
    """

    dsc_per_class: List[float] = field(default_factory=list)
    hd95_per_class: List[float] = field(default_factory=list)
    mean_dsc: float = 0.0
    mean_hd95: float = float("nan")
    acc: float = 0.0

    def to_frame(self) -> pd.DataFrame:
        """Tab-report rows: one per class, then mean_dsc and acc summaries"""
        rows = [{"class": str(c), "dsc": d, "hd95": h}
                for c, (d, h) in enumerate(zip(self.dsc_per_class, self.hd95_per_class))]
        rows.append({"class": "mean_dsc", "dsc": self.mean_dsc, "hd95": self.mean_hd95})
        rows.append({"class": "acc", "dsc": self.acc, "hd95": float("nan")})
        return pd.DataFrame(rows, columns=["class", "dsc", "hd95"])


def dice_score(pred: np.ndarray, truth: np.ndarray) -> float:
    """2|P & Y| / (|P| + |Y|); 1 when both are empty"""
    pred, truth = np.asarray(pred, dtype=bool), np.asarray(truth, dtype=bool)
    total = int(pred.sum()) + int(truth.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(pred, truth).sum()) / total


def boundary(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with at least one 4-neighbour outside the mask or the image"""
    mask = np.asarray(mask, dtype=bool)
    return mask & ~ndimage.binary_erosion(mask, border_value=0)


def hd95(pred: np.ndarray, truth: np.ndarray) -> float:
    """
    95th percentile (nearest rank) of the pooled nearest-boundary distances in both directions

    Returns 0 when both masks are empty and NaN when exactly one is.
    """
    pred, truth = np.asarray(pred, dtype=bool), np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise ShapeError(f"hd95 mask shapes differ: {pred.shape} vs {truth.shape}")
    pred_empty, truth_empty = not pred.any(), not truth.any()
    if pred_empty and truth_empty:
        return 0.0
    if pred_empty or truth_empty:
        return float("nan")

    pred_points = np.argwhere(boundary(pred))
    truth_points = np.argwhere(boundary(truth))
    distances = cdist(pred_points, truth_points)
    pooled = np.sort(np.concatenate([distances.min(axis=1), distances.min(axis=0)]))
    rank = max(math.ceil(0.95 * pooled.size) - 1, 0)
    return float(pooled[rank])


def compute_metrics(pred_labels: np.ndarray, truth: np.ndarray, num_classes: int) -> SegmentationMetrics:
    """
    Args:
        pred_labels: [N, H, W] predicted class indices
        truth: [N, H, W] true class indices
        num_classes: K (1 is treated as the two labels {0, 1})

    Returns:
        SegmentationMetrics
    """
    pred_labels, truth = np.asarray(pred_labels), np.asarray(truth)
    if pred_labels.shape != truth.shape:
        raise ShapeError(f"prediction shape {pred_labels.shape} != truth shape {truth.shape}")
    if pred_labels.ndim == 2:
        pred_labels, truth = pred_labels[None], truth[None]
    classes = max(num_classes, 2)

    dsc, hd = [], []
    for c in range(classes):
        p, y = pred_labels == c, truth == c
        dsc.append(dice_score(p, y))
        per_image = [hd95(p[i], y[i]) for i in range(p.shape[0])]
        hd.append(float(np.nanmean(per_image)) if not np.all(np.isnan(per_image)) else float("nan"))

    foreground_hd = [h for h in hd[1:] if not math.isnan(h)]
    return SegmentationMetrics(
        dsc_per_class=dsc,
        hd95_per_class=hd,
        mean_dsc=float(np.mean(dsc[1:])),
        mean_hd95=float(np.mean(foreground_hd)) if foreground_hd else float("nan"),
        acc=float((pred_labels == truth).mean()),
    )


def metrics(pred_labels: np.ndarray, truth: np.ndarray, num_classes: int) -> SegmentationMetrics:
    return compute_metrics(pred_labels, truth, num_classes)


def per_image_frame(pred_labels: np.ndarray, truth: np.ndarray, num_classes: int,
                    indices: List[int]) -> pd.DataFrame:
    """One row per image: index, mean_dsc, mean_hd95, acc"""
    rows = []
    for i, index in enumerate(indices):
        m = compute_metrics(pred_labels[i], truth[i], num_classes)
        rows.append({"index": index, "mean_dsc": m.mean_dsc, "mean_hd95": m.mean_hd95, "acc": m.acc})
    return pd.DataFrame(rows, columns=["index", "mean_dsc", "mean_hd95", "acc"])


def print_metrics(result: SegmentationMetrics, title: str = "SEGMENTATION METRICS"):
    print("\n" + "=" * 70)
    print(title)
    print("=" * 70)
    for c, (d, h) in enumerate(zip(result.dsc_per_class, result.hd95_per_class)):
        label = "background" if c == 0 else f"class {c}"
        print(f"  {label:<12} DSC {d:.4f} | HD95 {h:.2f}")
    print(f"\n🎯 Mean DSC (foreground): {result.mean_dsc:.4f}")
    print(f"📏 Mean HD95 (foreground): {result.mean_hd95:.2f}")
    print(f"✅ Pixel accuracy: {result.acc:.4f}")
    print("=" * 70)


def labels_from_logits(logits: np.ndarray) -> np.ndarray:
    """Argmax over classes, or a zero-logit (sigmoid 0.5) threshold when K = 1"""
    logits = np.asarray(logits)
    if logits.shape[1] == 1:
        return (logits[:, 0] > 0).astype(np.int64)
    return logits.argmax(axis=1).astype(np.int64)


def mean_foreground_dsc(pred_labels: np.ndarray, truth: np.ndarray, num_classes: int) -> float:
    """Batch-pooled DSC averaged over classes 1..K-1 (no HD95)"""
    classes = max(num_classes, 2)
    return float(np.mean([dice_score(pred_labels == c, truth == c) for c in range(1, classes)]))
