"""
Dataset Module
Loads manifest-described image/mask pairs and serves seeded mini-batches
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config.macmd_config import IMAGE_CHANNELS, MANIFEST_NAME
from src.numerics.rng import make_rng
from src.pipeline.pgm import read_pgm
from src.utils.errors import DataError

logger = logging.getLogger(__name__)


@dataclass
class SegSample:
    image: np.ndarray  # [3, H, W] float, grey replicated
    mask: np.ndarray   # [H, W] int64
    index: int


@dataclass
class SegBatch:
    images: np.ndarray  # [N, 3, H, W]
    masks: np.ndarray   # [N, H, W]
    indices: List[int]

    def __len__(self) -> int:
        return len(self.indices)


def to_network_input(grey: np.ndarray, dtype=np.float32) -> np.ndarray:
    """uint8 [H, W] -> [3, H, W] in [0, 1]"""
    scaled = grey.astype(dtype) / 255.0
    return np.repeat(scaled[None], IMAGE_CHANNELS, axis=0)


class SegDataset:
    """
    In-memory segmentation dataset read from a gen-data directory

    The class count is taken from the manifest's count_* columns.
    """

    def __init__(self, data_dir, dtype=np.float32):
        self.data_dir = Path(data_dir)
        manifest_file = self.data_dir / MANIFEST_NAME
        if not manifest_file.exists():
            raise DataError(f"no {MANIFEST_NAME} in {self.data_dir}")
        try:
            self.manifest = pd.read_csv(manifest_file, sep="\t")
        except (pd.errors.ParserError, pd.errors.EmptyDataError) as err:
            raise DataError(f"unreadable manifest {manifest_file}: {err}") from err

        missing = {"index", "image", "mask"} - set(self.manifest.columns)
        if missing:
            raise DataError(f"manifest {manifest_file} lacks columns {sorted(missing)}")
        self.count_columns = [c for c in self.manifest.columns if c.startswith("count_")]
        if len(self.count_columns) < 2:
            raise DataError(f"manifest {manifest_file} declares fewer than two classes")

        self.samples: List[SegSample] = []
        for row in self.manifest.itertuples(index=False):
            image = read_pgm(self.data_dir / row.image)
            mask = read_pgm(self.data_dir / row.mask)
            if image.shape != mask.shape:
                raise DataError(f"sample {row.index}: image {image.shape} and mask {mask.shape} differ")
            if int(mask.max()) >= self.num_classes:
                raise DataError(f"sample {row.index}: mask value {int(mask.max())} >= {self.num_classes} classes")
            self.samples.append(SegSample(to_network_input(image, dtype), mask.astype(np.int64), int(row.index)))

        sizes = {s.mask.shape for s in self.samples}
        if len(sizes) != 1:
            raise DataError(f"samples in {self.data_dir} have mixed sizes {sorted(sizes)}")
        logger.info(f"Loaded {len(self.samples)} samples from {self.data_dir}")

    @property
    def num_classes(self) -> int:
        return len(self.count_columns)

    @property
    def image_size(self) -> Tuple[int, int]:
        return self.samples[0].mask.shape

    def __len__(self) -> int:
        return len(self.samples)

    def split(self, val_fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
        """Deterministic (train, val) position split; val is empty for fraction 0"""
        positions = np.arange(len(self.samples))
        n_val = int(round(val_fraction * len(positions)))
        if n_val == 0:
            return positions, positions[:0]
        if n_val >= len(positions):
            raise DataError(f"val_fraction {val_fraction} leaves no training samples")
        order = make_rng(seed, "dataset.split").permutation(positions)
        return np.sort(order[n_val:]), np.sort(order[:n_val])

    def batch(self, positions: Sequence[int], flips: Optional[Sequence[bool]] = None) -> SegBatch:
        images, masks = [], []
        for j, p in enumerate(positions):
            sample = self.samples[p]
            image, mask = sample.image, sample.mask
            if flips is not None and flips[j]:
                image, mask = image[:, :, ::-1], mask[:, ::-1]
            images.append(image)
            masks.append(mask)
        return SegBatch(np.ascontiguousarray(np.stack(images)), np.ascontiguousarray(np.stack(masks)),
                        [self.samples[p].index for p in positions])

    def batches(self, positions: Sequence[int], batch_size: int, shuffle_rng=None,
                hflip_rng=None) -> Iterator[SegBatch]:
        """
        Yield mini-batches over the given sample positions

        Args:
            positions: Sample positions to draw from
            batch_size: Maximum batch size (the last batch may be smaller)
            shuffle_rng: Generator permuting the order (None keeps it)
            hflip_rng: Generator drawing a horizontal flip per sample (None disables)
        """
        order = np.asarray(positions)
        if shuffle_rng is not None:
            order = shuffle_rng.permutation(order)
        for start in range(0, len(order), batch_size):
            chunk = order[start:start + batch_size]
            flips = hflip_rng.random(len(chunk)) < 0.5 if hflip_rng is not None else None
            yield self.batch(chunk, flips)
