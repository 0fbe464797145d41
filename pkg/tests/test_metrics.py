import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from core_utils.errors import InvalidDimensionError
from core_utils.numerics import make_rng
from utils.metrics import PSNR_CAP_DB, MetricsRecord, TrajectoryMetrics, energy_distance, line_fit_r2, psnr


class TestPsnr:
    def test_identical_signals_hit_cap(self):
        x = np.array([0.1, 0.5, 0.9])
        assert psnr(x, x.copy()) == PSNR_CAP_DB == 200.0

    def test_known_mse(self):
        ref = np.zeros(4)
        x = np.full(4, 0.1)
        assert_allclose(psnr(x, ref, 1.0), 20.0)

    def test_peak_scales(self):
        ref, x = np.zeros(2), np.ones(2)
        assert_allclose(psnr(x, ref, 10.0), 20.0)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            psnr(np.zeros(2), np.ones(2), 0.0)
        with pytest.raises(InvalidDimensionError):
            psnr(np.zeros(2), np.zeros(3))


class TestEnergyDistance:
    def test_identical_sets(self, rng):
        a = rng.standard_normal((50, 3))
        assert energy_distance(a, a.copy()) <= 1e-12

    def test_separated_gaussians(self):
        rng = make_rng(42)
        a = rng.standard_normal(1000)
        b = 10.0 + rng.standard_normal(1000)
        expected = 2.0 * 10.0 - 2.0 * (2.0 / math.sqrt(math.pi))
        assert abs(energy_distance(a, b) - expected) < 0.05 * expected

    def test_nonnegative_on_random_pairs(self, rng):
        for _ in range(100):
            dim = int(rng.integers(1, 5))
            a = rng.standard_normal((int(rng.integers(1, 30)), dim)) * rng.uniform(0.1, 3.0)
            b = rng.standard_normal((int(rng.integers(1, 30)), dim)) + rng.uniform(-2.0, 2.0, size=dim)
            assert energy_distance(a, b) >= -1e-12

    def test_symmetry(self, rng):
        a, b = rng.standard_normal((30, 2)), 1.0 + rng.standard_normal((40, 2))
        assert_allclose(energy_distance(a, b), energy_distance(b, a))

    def test_dimension_mismatch(self, rng):
        with pytest.raises(InvalidDimensionError):
            energy_distance(rng.standard_normal((5, 2)), rng.standard_normal((5, 3)))

    def test_empty_set(self):
        with pytest.raises(InvalidDimensionError):
            energy_distance(np.zeros((0, 2)), np.zeros((3, 2)))


def test_line_fit_r2():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    assert_allclose(line_fit_r2(x, 3.0 * x + 1.0), 1.0)
    assert line_fit_r2(x, np.array([1.0, -1.0, 1.0, -1.0])) < 0.5


class TestMetricsRecord:
    def test_csv_row_follows_columns(self):
        record = MetricsRecord(
            method="ndtm",
            n_trajectories=2,
            psnr=31.5,
            residual=0.02,
            sample_mean_error=0.1,
            energy_distance=None,
            wall_time=1.5,
            per_trajectory=[TrajectoryMetrics(index=0, psnr=31.0, residual=0.02, wall_time=0.7)],
        )
        row = record.csv_row()
        assert len(row) == len(MetricsRecord.CSV_COLUMNS)
        assert row[0] == "ndtm"
        assert row[MetricsRecord.CSV_COLUMNS.index("energy_distance")] == ""

    def test_validation(self):
        with pytest.raises(ValueError):
            MetricsRecord(method="dps", n_trajectories=0, psnr=1.0, residual=1.0, sample_mean_error=0.0, wall_time=0.0)
