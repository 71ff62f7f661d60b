"""
Evaluation Module
Checkpoint loading, eval-mode inference, metric reports and single-image prediction
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config.macmd_config import DEFAULT_BATCH_SIZE, SIZE_MULTIPLE
from src.decoder.macmd import MacmdModel
from src.numerics.tensor import Tensor, no_grad
from src.objective.losses import label_classes
from src.objective.metrics import (
    SegmentationMetrics, compute_metrics, labels_from_logits, per_image_frame,
)
from src.pipeline.checkpoint import load_checkpoint
from src.pipeline.dataset import SegDataset, to_network_input
from src.pipeline.pgm import read_pgm, write_pgm
from src.pipeline.train_config import TrainConfig, sidecar_path
from src.reporting.report_generator import plot_overlay
from src.utils.errors import CheckpointError, DataError

logger = logging.getLogger(__name__)


@dataclass
class EvaluationReport:
    metrics: SegmentationMetrics
    per_image: pd.DataFrame
    report_path: Optional[Path] = None


def load_model(checkpoint) -> Tuple[MacmdModel, TrainConfig]:
    """Rebuild the architecture from the YAML sidecar, then restore the weights"""
    sidecar = sidecar_path(checkpoint)
    if not sidecar.exists():
        raise CheckpointError(f"missing config sidecar {sidecar} for checkpoint {checkpoint}")
    config = TrainConfig.from_yaml(sidecar)
    model = MacmdModel(config.model_config())
    load_checkpoint(model.store, checkpoint)
    return model, config


def predict_labels(model: MacmdModel, images: np.ndarray) -> np.ndarray:
    """Eval-mode label maps from the final prediction p1"""
    model.eval()
    with no_grad():
        p1, _, _ = model(Tensor(images.astype(model.store.dtype, copy=False)))
    return labels_from_logits(p1.data)


def predict_dataset(model: MacmdModel, dataset: SegDataset, positions: Sequence[int],
                    batch_size: int = DEFAULT_BATCH_SIZE) -> Tuple[np.ndarray, np.ndarray, list]:
    preds, truths, indices = [], [], []
    for batch in dataset.batches(positions, batch_size):
        preds.append(predict_labels(model, batch.images))
        truths.append(batch.masks)
        indices.extend(batch.indices)
    return np.concatenate(preds), np.concatenate(truths), indices


def check_compatible(config: TrainConfig, dataset: SegDataset):
    expected = label_classes(config.num_classes)
    if dataset.num_classes != expected:
        raise DataError(f"dataset has {dataset.num_classes} classes, model expects {expected}")
    height, width = dataset.image_size
    if height % SIZE_MULTIPLE or width % SIZE_MULTIPLE:
        raise DataError(f"dataset image size {height}x{width} is not a multiple of {SIZE_MULTIPLE}")


def evaluate(checkpoint, data_dir, report_path=None,
             batch_size: int = DEFAULT_BATCH_SIZE) -> EvaluationReport:
    """
    Evaluate p1 of a saved model on every sample of a dataset

    Args:
        checkpoint: Checkpoint path (its .yaml sidecar must exist)
        data_dir: gen-data directory
        report_path: Optional report.tsv target; per-image rows go to <stem>.images.tsv

    Returns:
        EvaluationReport
    """
    model, config = load_model(checkpoint)
    dataset = SegDataset(data_dir)
    check_compatible(config, dataset)

    preds, truths, indices = predict_dataset(model, dataset, range(len(dataset)), batch_size)
    result = compute_metrics(preds, truths, config.num_classes)
    per_image = per_image_frame(preds, truths, config.num_classes, indices)

    path = None
    if report_path is not None:
        path = Path(report_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        result.to_frame().to_csv(path, sep="\t", index=False, na_rep="nan", float_format="%.6f")
        per_image.to_csv(path.with_suffix(".images.tsv"), sep="\t", index=False, na_rep="nan",
                         float_format="%.6f")
        logger.info(f"Wrote evaluation report {path}")
    return EvaluationReport(result, per_image, path)


def predict(checkpoint, image_path, out_path, overlay_path=None) -> np.ndarray:
    """Segment one PGM image and write its label map as a P5 greymap"""
    model, config = load_model(checkpoint)
    grey = read_pgm(image_path)
    height, width = grey.shape
    if height % SIZE_MULTIPLE or width % SIZE_MULTIPLE:
        raise DataError(f"image {image_path} is {height}x{width}; sides must be multiples of {SIZE_MULTIPLE}")

    labels = predict_labels(model, to_network_input(grey)[None])[0]
    write_pgm(out_path, labels.astype(np.uint8))
    logger.info(f"Wrote label map {out_path}")

    if overlay_path is not None:
        plot_overlay(grey, labels, label_classes(config.num_classes), overlay_path)
    return labels
