"""
Synthetic Dataset Generator
Seeded multi-class shapes on noisy backgrounds, written as P5 greymaps plus a manifest
"""

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from config.macmd_config import (
    DEFAULT_IMAGE_SIZE, IMAGE_PATTERN, MANIFEST_NAME, MASK_PATTERN, MAX_MASK_CLASSES,
    SYNTH_BACKGROUND_LEVEL, SYNTH_BAND_WIDTH, SYNTH_DEFAULT_CLASSES, SYNTH_DEFAULT_COUNT,
    SYNTH_MAX_SHAPES, SYNTH_MIN_SHAPES, SYNTH_NOISE_LEVEL, DEFAULT_SEED,
)
from src.numerics.rng import make_rng
from src.pipeline.pgm import write_pgm
from src.utils.errors import ConfigError, DataError

logger = logging.getLogger(__name__)

SHAPE_TYPES = ("ellipse", "rectangle")


@dataclass
class SyntheticSpec:
    """
    Attributes:
        count: Number of image/mask pairs
        image_size: Square side in pixels
        num_classes: K including background
        min_shapes / max_shapes: Shapes drawn per image (inclusive range)
        noise_level: Std of additive Gaussian noise in grey levels
        seed: Generator seed; the dataset is a pure function of the spec
    """

    count: int = SYNTH_DEFAULT_COUNT
    image_size: int = DEFAULT_IMAGE_SIZE
    num_classes: int = SYNTH_DEFAULT_CLASSES
    min_shapes: int = SYNTH_MIN_SHAPES
    max_shapes: int = SYNTH_MAX_SHAPES
    noise_level: float = SYNTH_NOISE_LEVEL
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.count < 1:
            raise ConfigError(f"count must be >= 1, got {self.count}")
        if self.image_size < 8:
            raise ConfigError(f"image size must be >= 8, got {self.image_size}")
        if self.num_classes < 2:
            raise ConfigError(f"synthetic data needs K >= 2 classes, got {self.num_classes}")
        if not 1 <= self.min_shapes <= self.max_shapes:
            raise ConfigError(f"shape range must satisfy 1 <= min <= max, got "
                              f"{self.min_shapes}..{self.max_shapes}")
        if self.noise_level < 0:
            raise ConfigError(f"noise level must be non-negative, got {self.noise_level}")

    def class_level(self, cls: int) -> int:
        """Centre grey level of a foreground class band"""
        top = 255 - SYNTH_BAND_WIDTH
        span = top - SYNTH_BACKGROUND_LEVEL - SYNTH_BAND_WIDTH
        return SYNTH_BACKGROUND_LEVEL + SYNTH_BAND_WIDTH + (span * cls) // (self.num_classes - 1)


def shape_mask(kind: str, size: int, center: Tuple[int, int], radii: Tuple[int, int]) -> np.ndarray:
    """Integer-geometry ellipse or axis-aligned rectangle"""
    rows, cols = np.ogrid[:size, :size]
    cy, cx = center
    ry, rx = radii
    if kind == "ellipse":
        return (rows - cy) ** 2 * rx * rx + (cols - cx) ** 2 * ry * ry <= rx * rx * ry * ry
    if kind == "rectangle":
        return (np.abs(rows - cy) <= ry) & (np.abs(cols - cx) <= rx)
    raise ConfigError(f"unknown shape type '{kind}'")


def render_sample(spec: SyntheticSpec, index: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Render one image/mask pair from its own random stream

    Returns:
        tuple: (image uint8 [S,S], mask uint8 [S,S] holding class indices)
    """
    rng = make_rng(spec.seed, f"synthetic.sample{index}")
    size = spec.image_size
    mask = np.zeros((size, size), dtype=np.uint8)
    image = np.full((size, size), SYNTH_BACKGROUND_LEVEL, dtype=np.int32)

    n_shapes = int(rng.integers(spec.min_shapes, spec.max_shapes + 1))
    min_radius = max(size // 16, 2)
    max_radius = max(size // 4, min_radius + 1)
    for _ in range(n_shapes):
        cls = int(rng.integers(1, spec.num_classes))
        kind = SHAPE_TYPES[int(rng.integers(0, len(SHAPE_TYPES)))]
        center = (int(rng.integers(0, size)), int(rng.integers(0, size)))
        radii = (int(rng.integers(min_radius, max_radius)), int(rng.integers(min_radius, max_radius)))
        jitter = int(rng.integers(-SYNTH_BAND_WIDTH // 2, SYNTH_BAND_WIDTH // 2 + 1))

        region = shape_mask(kind, size, center, radii)
        mask[region] = cls
        image[region] = spec.class_level(cls) + jitter

    if spec.noise_level > 0:
        noise = np.rint(rng.standard_normal((size, size)) * spec.noise_level).astype(np.int32)
        image = image + noise
    return np.clip(image, 0, 255).astype(np.uint8), mask


def _write_sample(spec: SyntheticSpec, out_dir: Path, index: int) -> Dict:
    image, mask = render_sample(spec, index)
    image_name = IMAGE_PATTERN.format(index)
    mask_name = MASK_PATTERN.format(index)
    write_pgm(out_dir / image_name, image)
    write_pgm(out_dir / mask_name, mask)

    counts = np.bincount(mask.reshape(-1), minlength=spec.num_classes)
    row = {"index": index, "image": image_name, "mask": mask_name}
    row.update({f"count_{c}": int(counts[c]) for c in range(spec.num_classes)})
    return row


def gen_dataset(spec: SyntheticSpec, out_dir, n_jobs: int = 1, progress: bool = True) -> pd.DataFrame:
    """
    Write img_%05d.pgm / msk_%05d.pgm pairs and manifest.tsv into out_dir

    Args:
        spec: Dataset description
        out_dir: Target directory (created when missing)
        n_jobs: joblib workers; output bytes do not depend on it
        progress: Show a tqdm bar

    Returns:
        pd.DataFrame: The manifest
    """
    if spec.num_classes > MAX_MASK_CLASSES:
        raise DataError(f"{spec.num_classes} classes exceed the 8-bit mask bound of {MAX_MASK_CLASSES}")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise DataError(f"cannot create dataset directory {out_dir}: {err}") from err
    if not os.access(out_dir, os.W_OK):
        raise DataError(f"dataset directory {out_dir} is not writable")

    indices = range(spec.count)
    if progress:
        indices = tqdm(indices, desc="Rendering samples", unit="img")
    try:
        rows = Parallel(n_jobs=n_jobs)(delayed(_write_sample)(spec, out_dir, i) for i in indices)
    except OSError as err:
        raise DataError(f"failed writing dataset to {out_dir}: {err}") from err

    manifest = pd.DataFrame(rows).sort_values("index").reset_index(drop=True)
    manifest.to_csv(out_dir / MANIFEST_NAME, sep="\t", index=False)
    logger.info(f"Wrote {spec.count} samples ({spec.num_classes} classes, "
                f"{spec.image_size}x{spec.image_size}) to {out_dir}")
    return manifest


def print_dataset_summary(manifest: pd.DataFrame, title: str = "SYNTHETIC DATASET"):
    count_cols = [c for c in manifest.columns if c.startswith("count_")]
    totals = manifest[count_cols].sum()
    all_pixels = totals.sum()
    print("\n" + "=" * 70)
    print(title)
    print("=" * 70)
    print(f"Samples: {len(manifest)}")
    print(f"Classes: {len(count_cols)}")
    print(f"\n📊 Pixel share per class:")
    for col in count_cols:
        share = 100.0 * totals[col] / all_pixels if all_pixels else 0.0
        print(f"  class {col.split('_')[1]}: {int(totals[col]):>10,} px ({share:5.2f}%)")
    print("=" * 70)
