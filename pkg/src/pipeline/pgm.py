"""
PGM I/O
8-bit binary greymaps (P5) for images and class masks
"""

from pathlib import Path

import numpy as np
from PIL import Image

from src.utils.errors import DataError


def write_pgm(path, array: np.ndarray) -> Path:
    """Write a 2-D uint8 array as a P5 greymap"""
    array = np.asarray(array)
    if array.ndim != 2 or array.dtype != np.uint8:
        raise DataError(f"PGM data must be a 2-D uint8 array, got {array.dtype} {array.shape}")
    path = Path(path)
    Image.fromarray(array).save(path, format="PPM")
    return path


def read_pgm(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing image file: {path}")
    try:
        with Image.open(path) as img:
            if img.mode != "L":
                raise DataError(f"{path} is not an 8-bit greymap (mode {img.mode})")
            return np.array(img, dtype=np.uint8)
    except OSError as err:
        raise DataError(f"cannot read {path}: {err}") from err
