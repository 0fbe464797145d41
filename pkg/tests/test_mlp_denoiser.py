import numpy as np
import pytest
from numpy.testing import assert_array_equal

from core_utils.errors import InvalidDimensionError, TrainingDivergedError
from core_utils.numerics import make_rng
from models.mlp_denoiser import MAGIC, MlpDenoiser, train_mlp_denoiser
from models.priors import standard_normal_model
from harness.runner import denoiser_error
from utils.oracle import finite_diff_grad, relative_error, vjp_check


@pytest.fixture
def mlp(short_sched):
    return MlpDenoiser.initialize(short_sched, 3, 8, make_rng(3))


class TestForward:
    def test_epsilon_vjp_matches_fd(self, mlp, rng):
        for t in (1, 50, 100):
            x = rng.standard_normal(3)
            assert vjp_check(lambda z: mlp.epsilon(z, t), lambda z, c: mlp.epsilon_vjp(z, t, c), x, rng) < 1e-4

    def test_parameter_gradients_match_fd(self, mlp, rng):
        x_t = rng.standard_normal((6, 3))
        t = rng.integers(1, 101, size=6)
        noise = rng.standard_normal((6, 3))
        _, grads = mlp.loss_and_grads(x_t, t, noise)
        for name in ("W1", "b2", "W3"):
            original = mlp.params[name].copy()

            def loss_at(flat, name=name, original=original):
                mlp.params[name] = flat.reshape(original.shape)
                return mlp.loss_and_grads(x_t, t, noise)[0]

            fd = finite_diff_grad(loss_at, original.ravel())
            mlp.params[name] = original
            assert relative_error(grads[name].ravel(), fd) < 1e-4

    def test_shape_validation(self, short_sched):
        params = MlpDenoiser.initialize(short_sched, 2, 4, make_rng(0)).params
        params["W2"] = np.zeros((4, 5))
        with pytest.raises(InvalidDimensionError):
            MlpDenoiser(short_sched, params)


class TestSerialization:
    def test_bytes_round_trip(self, mlp, short_sched, rng):
        restored = MlpDenoiser.from_bytes(mlp.to_bytes(), short_sched)
        x = rng.standard_normal(3)
        assert_array_equal(restored.epsilon(x, 40), mlp.epsilon(x, 40))

    def test_layout(self, mlp):
        blob = mlp.to_bytes()
        assert blob[:8] == MAGIC
        assert np.frombuffer(blob, dtype="<u4", count=2, offset=8).tolist() == [3, 8]
        n_params = 4 * 8 + 8 + 8 * 8 + 8 + 8 * 3 + 3
        assert len(blob) == 16 + 8 * n_params

    def test_bad_magic(self, mlp, short_sched):
        with pytest.raises(ValueError):
            MlpDenoiser.from_bytes(b"XXXXXXXX" + mlp.to_bytes()[8:], short_sched)

    def test_trailing_bytes(self, mlp, short_sched):
        with pytest.raises(ValueError):
            MlpDenoiser.from_bytes(mlp.to_bytes() + b"\x00" * 8, short_sched)

    def test_save_load(self, mlp, short_sched, tmp_path):
        path = tmp_path / "model.bin"
        mlp.save(path)
        assert_array_equal(MlpDenoiser.load(path, short_sched).params["W1"], mlp.params["W1"])


class TestTraining:
    def test_zero_epochs_is_initialization(self, short_sched):
        data = make_rng(0).standard_normal((32, 2))
        trained = train_mlp_denoiser(data, short_sched, 0, 1e-3, make_rng(5), hidden=6)
        fresh = MlpDenoiser.initialize(short_sched, 2, 6, make_rng(5))
        for name, value in fresh.params.items():
            assert_array_equal(trained.params[name], value)

    def test_loss_decreases(self, short_sched):
        rng = make_rng(11)
        data = rng.standard_normal((512, 2))
        model = train_mlp_denoiser(data, short_sched, 60, 5e-3, rng, hidden=32, batch_size=64)
        history = np.array(model.loss_history)
        assert history[-10:].mean() < history[:10].mean()

    def test_dimension_mismatch(self, mlp, short_sched, rng):
        with pytest.raises(InvalidDimensionError):
            train_mlp_denoiser(rng.standard_normal((8, 2)), short_sched, 1, 1e-3, rng, model=mlp)

    def test_divergence_reports_epoch(self, short_sched, rng):
        data = rng.standard_normal((16, 2))
        data[3, 0] = np.nan
        with pytest.raises(TrainingDivergedError) as info:
            train_mlp_denoiser(data, short_sched, 3, 1e-3, rng, hidden=4)
        assert info.value.epoch == 0


@pytest.mark.slow
def test_trained_denoiser_matches_analytic_epsilon(short_sched):
    rng = make_rng(2024)
    data = rng.standard_normal((8192, 2))
    model = train_mlp_denoiser(data, short_sched, 300, 2e-3, rng, hidden=64, batch_size=256)
    reference = standard_normal_model(short_sched, 2)
    assert denoiser_error(model, reference, short_sched, make_rng(1), n_probes=100) < 0.1
