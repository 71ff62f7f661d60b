"""
Checkpoint Module
Binary parameter snapshots: magic, record count, then named little-endian float32 tensors
"""

import logging
import struct
from pathlib import Path
from typing import List, Tuple

import numpy as np

from config.macmd_config import CHECKPOINT_MAGIC
from src.numerics.params import ParamStore
from src.utils.errors import CheckpointError

logger = logging.getLogger(__name__)

HEADER = struct.Struct("<8sI")
NAME_LEN = struct.Struct("<H")
RANK = struct.Struct("<B")

Record = Tuple[str, np.ndarray]


def encode_records(records: List[Record]) -> bytes:
    names = [name for name, _ in records]
    if len(set(names)) != len(names):
        duplicate = next(n for n in names if names.count(n) > 1)
        raise CheckpointError(f"duplicate tensor name '{duplicate}'")

    chunks = [HEADER.pack(CHECKPOINT_MAGIC, len(records))]
    for name, array in records:
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: '{name[:40]}...'")
        array = np.asarray(array)
        chunks.append(NAME_LEN.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(RANK.pack(array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return b"".join(chunks)


def decode_records(payload: bytes, source: str = "checkpoint") -> List[Record]:
    """Parse a checkpoint byte string; rejects bad magic, truncation and duplicates"""
    offset = 0

    def take(size: int, what: str) -> bytes:
        nonlocal offset
        if offset + size > len(payload):
            raise CheckpointError(f"{source}: truncated while reading {what}")
        chunk = payload[offset:offset + size]
        offset += size
        return chunk

    magic, count = HEADER.unpack(take(HEADER.size, "header"))
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{source}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")

    records: List[Record] = []
    seen = set()
    for i in range(count):
        (name_len,) = NAME_LEN.unpack(take(NAME_LEN.size, f"record {i} name length"))
        try:
            name = take(name_len, f"record {i} name").decode("utf-8")
        except UnicodeDecodeError as err:
            raise CheckpointError(f"{source}: record {i} name is not UTF-8") from err
        if name in seen:
            raise CheckpointError(f"{source}: duplicate tensor name '{name}'")
        seen.add(name)

        (rank,) = RANK.unpack(take(RANK.size, f"'{name}' rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"'{name}' dims"))
        size = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(take(4 * size, f"'{name}' data"), dtype="<f4").reshape(dims)
        records.append((name, data.astype(np.float32)))

    if offset != len(payload):
        raise CheckpointError(f"{source}: {len(payload) - offset} trailing bytes after {count} records")
    return records


def save_checkpoint(store: ParamStore, path) -> Path:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    records = store.state_records()
    path.write_bytes(encode_records(records))
    logger.info(f"Saved checkpoint {path} ({len(records)} tensors)")
    return path


def load_checkpoint(store: ParamStore, path) -> ParamStore:
    """
    Restore every parameter and running statistic of `store` from `path`

    The checkpoint must hold exactly the store's tensor names with matching
    shapes; the first offending tensor is named in the error.
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    records = decode_records(path.read_bytes(), str(path))

    expected = {name: array.shape for name, array in store.state_records()}
    for name, array in records:
        if name not in expected:
            raise CheckpointError(f"{path}: tensor '{name}' does not exist in the model")
        if array.shape != expected[name]:
            raise CheckpointError(f"{path}: tensor '{name}' has shape {array.shape}, "
                                  f"model expects {expected[name]}")
    present = {name for name, _ in records}
    for name in expected:
        if name not in present:
            raise CheckpointError(f"{path}: model tensor '{name}' missing from checkpoint")

    for name, array in records:
        store.assign(name, array)
    logger.info(f"Loaded checkpoint {path} ({len(records)} tensors)")
    return store


def checkpoint_io(store: ParamStore, path, direction: str):
    """Write ('write') or read ('read') a store's checkpoint"""
    if direction == "write":
        return save_checkpoint(store, path)
    if direction == "read":
        return load_checkpoint(store, path)
    raise ValueError(f"direction must be 'read' or 'write', got '{direction}'")
