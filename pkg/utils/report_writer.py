# utils/report_writer.py

import csv
import io
import math
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from core_utils.errors import InvalidDimensionError


def _format(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    """CSV with a fixed column order; floats keep full round-trip precision."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row has {len(row)} fields, header has {len(header)}")
        writer.writerow([_format(v) for v in row])
    return buf.getvalue()


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(header, rows), encoding="utf-8")
    return path


def pgm_bytes(signal, value_range: Optional[Tuple[float, float]] = None) -> bytes:
    """Binary 8-bit PGM of a length-d signal laid out as a sqrt(d) x sqrt(d) grid.

    Values are mapped linearly from ``value_range`` (default: the signal's own
    min/max) onto 0..255 and clipped.
    """
    signal = np.asarray(signal, dtype=np.float64).ravel()
    side = math.isqrt(signal.size)
    if side * side != signal.size:
        raise InvalidDimensionError(f"signal of length {signal.size} is not a square grid")
    lo, hi = value_range if value_range is not None else (float(signal.min()), float(signal.max()))
    span = hi - lo
    scaled = np.zeros_like(signal) if span <= 0.0 else (signal - lo) / span
    pixels = np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8)
    return f"P5\n{side} {side}\n255\n".encode("ascii") + pixels.tobytes()


def write_pgm(path: Path, signal, value_range: Optional[Tuple[float, float]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(pgm_bytes(signal, value_range))
    return path
