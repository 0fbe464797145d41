# utils/tensor_io.py

"""Flat binary tensors: magic ``NDTMVEC1``, little-endian u4 rank, u4 extents,
then the row-major float64 payload."""

from pathlib import Path

import numpy as np

MAGIC = b"NDTMVEC1"


def tensor_to_bytes(arr) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    header = MAGIC + np.array([arr.ndim, *arr.shape], dtype="<u4").tobytes()
    return header + arr.tobytes()


def tensor_from_bytes(blob: bytes) -> np.ndarray:
    if blob[: len(MAGIC)] != MAGIC:
        raise ValueError("not a flat tensor file (bad magic)")
    offset = len(MAGIC)
    (rank,) = np.frombuffer(blob, dtype="<u4", count=1, offset=offset)
    offset += 4
    shape = tuple(int(n) for n in np.frombuffer(blob, dtype="<u4", count=int(rank), offset=offset))
    offset += 4 * int(rank)
    count = int(np.prod(shape, dtype=np.int64))
    if len(blob) != offset + 8 * count:
        raise ValueError(f"payload holds {len(blob) - offset} bytes, expected {8 * count}")
    return np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)


def save_tensor(path: Path, arr) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(tensor_to_bytes(arr))
    return path


def load_tensor(path: Path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())
