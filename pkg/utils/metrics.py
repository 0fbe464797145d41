# utils/metrics.py

import math
from typing import ClassVar, List, Optional

import numpy as np
from pydantic import BaseModel, Field
from scipy.spatial.distance import cdist
from scipy.stats import linregress

from core_utils.errors import InvalidDimensionError
from core_utils.numerics import Vec, check_same_dim

PSNR_CAP_DB = 200.0


def psnr(x: Vec, ref: Vec, max_value: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 200 dB for identical inputs."""
    check_same_dim(x, ref, "signal and reference")
    if max_value <= 0.0:
        raise ValueError(f"max_value must be positive, got {max_value}")
    diff = np.asarray(x, dtype=np.float64) - np.asarray(ref, dtype=np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(max_value * max_value / mse), PSNR_CAP_DB)


def _as_samples(samples) -> np.ndarray:
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[0] == 0:
        raise InvalidDimensionError("energy distance needs nonempty sample sets")
    return arr


def energy_distance(samples_a, samples_b) -> float:
    """2 E||a - b|| - E||a - a'|| - E||b - b'|| over all pairs (diagonals included)."""
    a, b = _as_samples(samples_a), _as_samples(samples_b)
    check_same_dim(a, b, "sample sets")
    value = 2.0 * cdist(a, b).mean() - cdist(a, a).mean() - cdist(b, b).mean()
    return max(float(value), 0.0)


def line_fit_r2(x, y) -> float:
    fit = linregress(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
    return float(fit.rvalue**2)


class TrajectoryMetrics(BaseModel):
    index: int
    psnr: float
    residual: float
    wall_time: float


class MetricsRecord(BaseModel):
    """Aggregate metrics of one solve run; means over trajectories."""

    method: str
    n_trajectories: int = Field(ge=1)
    psnr: float
    residual: float
    sample_mean_error: float = Field(ge=0.0)
    energy_distance: Optional[float] = Field(None, ge=0.0)
    wall_time: float = Field(ge=0.0)
    per_trajectory: List[TrajectoryMetrics] = Field(default_factory=list)

    CSV_COLUMNS: ClassVar[tuple] = ("method", "n_trajectories", "psnr", "residual", "sample_mean_error", "energy_distance", "wall_time")

    def csv_row(self) -> tuple:
        ed = "" if self.energy_distance is None else self.energy_distance
        return (self.method, self.n_trajectories, self.psnr, self.residual, self.sample_mean_error, ed, self.wall_time)
