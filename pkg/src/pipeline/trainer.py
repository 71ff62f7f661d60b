"""
Training Engine
Seeded epoch loop: forward, deep-supervision loss, backward, AdamW with cosine schedule
"""

import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from src.decoder.macmd import MacmdModel
from src.numerics.rng import make_rng
from src.numerics.tensor import Tensor, backward
from src.objective.losses import label_classes, total_loss
from src.objective.metrics import labels_from_logits, mean_foreground_dsc
from src.pipeline.checkpoint import save_checkpoint
from src.pipeline.dataset import SegDataset
from src.pipeline.evaluator import predict_dataset
from src.pipeline.optimizer import AdamW, cosine_lr
from src.pipeline.train_config import TrainConfig, history_path, sidecar_path
from src.utils.errors import DataError

logger = logging.getLogger(__name__)


@dataclass
class TrainResult:
    history: pd.DataFrame
    best_dsc: float
    best_epoch: int
    final_loss: float
    checkpoint: Path
    seconds: float


class Trainer:
    """
    Training loop for one TrainConfig on one dataset directory

    Shuffling, flips and parameter initialization all derive from the config
    seed, so a run is reproducible bit for bit in single-threaded mode.
    """

    def __init__(self, config: TrainConfig, data_dir, dataset: Optional[SegDataset] = None):
        """
        Args:
            config: Hyperparameters and architecture
            data_dir: gen-data directory
            dataset: Pre-loaded dataset (skips reading data_dir)
        """
        self.config = config
        self.dataset = dataset if dataset is not None else SegDataset(data_dir)
        self._check_dataset()

        self.model = MacmdModel(config.model_config())
        self.optimizer = AdamW(self.model.store, weight_decay=config.weight_decay)
        self.weights = config.loss_weights()

        self.train_positions, self.val_positions = self.dataset.split(config.val_fraction, config.seed)
        self.steps_per_epoch = math.ceil(len(self.train_positions) / config.batch_size)
        self.total_steps = config.epochs * self.steps_per_epoch
        self.history: List[dict] = []

        logger.info(f"Trainer ready: {len(self.train_positions)} train / {len(self.val_positions)} val samples, "
                    f"{self.model.num_parameters():,} parameters, {self.total_steps} steps")

    def _check_dataset(self):
        expected = label_classes(self.config.num_classes)
        if self.dataset.num_classes != expected:
            raise DataError(f"dataset has {self.dataset.num_classes} classes but the model is "
                            f"configured for K={self.config.num_classes} ({expected} label values)")
        size = (self.config.image_size, self.config.image_size)
        if tuple(self.dataset.image_size) != size:
            raise DataError(f"dataset images are {self.dataset.image_size}, config expects {size}")

    def train_epoch(self, epoch: int) -> dict:
        """Run one epoch; returns its history row"""
        cfg = self.config
        self.model.train()
        shuffle_rng = make_rng(cfg.seed, f"train.shuffle.epoch{epoch}")
        flip_rng = make_rng(cfg.seed, f"train.hflip.epoch{epoch}") if cfg.hflip else None

        losses, preds, truths = [], [], []
        lr = cfg.lr
        for b, batch in enumerate(self.dataset.batches(self.train_positions, cfg.batch_size,
                                                       shuffle_rng, flip_rng)):
            step = epoch * self.steps_per_epoch + b
            lr = cosine_lr(step, self.total_steps, cfg.lr, cfg.lr_min)

            self.optimizer.zero_grad()
            maps = self.model(Tensor(batch.images))
            loss = total_loss(maps, batch.masks, self.weights)
            backward(loss, self.model.store)
            self.optimizer.step(lr)

            losses.append(loss.item())
            preds.append(labels_from_logits(maps[0].data))
            truths.append(batch.masks)

        dsc = mean_foreground_dsc(np.concatenate(preds), np.concatenate(truths), cfg.num_classes)
        return {"epoch": epoch + 1, "loss": float(np.mean(losses)), "train_dsc": dsc, "lr": lr}

    def validate(self) -> float:
        preds, truths, _ = predict_dataset(self.model, self.dataset, self.val_positions, self.config.batch_size)
        return mean_foreground_dsc(preds, truths, self.config.num_classes)

    def run(self) -> TrainResult:
        cfg = self.config
        checkpoint = Path(cfg.checkpoint)
        checkpoint.parent.mkdir(parents=True, exist_ok=True)
        cfg.to_yaml(sidecar_path(cfg.checkpoint))

        print("\n" + "=" * 70)
        print("STARTING TRAINING")
        print("=" * 70)
        print(f"Modules: {cfg.model_config().modules_label}")
        print(f"Channels: {cfg.channels} | Classes: {cfg.num_classes} | Image: {cfg.image_size}px")
        print(f"Epochs: {cfg.epochs} | Batch: {cfg.batch_size} | LR: {cfg.lr:g} -> {cfg.lr_min:g}")

        start = time.time()
        best_dsc, best_epoch = -1.0, 0
        for epoch in range(cfg.epochs):
            row = self.train_epoch(epoch)
            if len(self.val_positions):
                row["val_dsc"] = self.validate()
            score = row.get("val_dsc", row["train_dsc"])
            if score > best_dsc:
                best_dsc, best_epoch = score, epoch + 1
                save_checkpoint(self.model.store, checkpoint)
            self.history.append(row)
            logger.info(f"epoch {epoch + 1}/{cfg.epochs} loss {row['loss']:.6f} "
                        f"train_dsc {row['train_dsc']:.4f}"
                        + (f" val_dsc {row['val_dsc']:.4f}" if "val_dsc" in row else "")
                        + f" lr {row['lr']:.2e}")

        history = pd.DataFrame(self.history)
        history.to_csv(history_path(cfg.checkpoint), sep="\t", index=False)
        result = TrainResult(history, best_dsc, best_epoch, float(history["loss"].iloc[-1]),
                             checkpoint, time.time() - start)
        print(f"\n✅ Training completed in {result.seconds:.1f}s")
        return result

    def print_training_summary(self, result: TrainResult):
        print("\n" + "=" * 70)
        print("TRAINING SUMMARY")
        print("=" * 70)
        print(f"Duration: {result.seconds:.1f}s")
        print(f"Epochs: {len(result.history)}")
        print(f"\n📉 Loss:")
        print(f"  First epoch: {result.history['loss'].iloc[0]:.6f}")
        print(f"  Final epoch: {result.final_loss:.6f}")
        print(f"\n🎯 Dice (foreground mean):")
        print(f"  Final train DSC: {result.history['train_dsc'].iloc[-1]:.4f}")
        print(f"  Best score: {result.best_dsc:.4f} (epoch {result.best_epoch})")
        print(f"\n💾 Checkpoint: {result.checkpoint}")
        print("=" * 70)


def train(config: TrainConfig, data_dir) -> TrainResult:
    return Trainer(config, data_dir).run()
