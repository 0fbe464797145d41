import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from core_utils.errors import InvalidDimensionError, InvalidMaskError
from tools.operators import (
    CircularConvOperator,
    DenseOperator,
    DownsampleOperator,
    IdentityOperator,
    MaskOperator,
    NonlinearBlurOperator,
    apply_circular_conv,
    apply_downsample,
    apply_mask,
    apply_nonlinear_blur,
    gaussian_kernel,
    operator_matrix,
)
from utils.oracle import relative_error, vjp_check


def test_mask():
    assert_array_equal(apply_mask([1, 0, 1, 0], [1.0, 2.0, 3.0, 4.0]), [1.0, 0.0, 3.0, 0.0])
    x = np.array([0.3, -1.2, 5.0])
    assert_array_equal(apply_mask(np.ones(3), x), x)


def test_mask_rejects_fractional_entries():
    with pytest.raises(InvalidMaskError):
        apply_mask([1.0, 0.5], [1.0, 2.0])


def test_mask_length_mismatch():
    with pytest.raises(InvalidDimensionError):
        apply_mask([1, 0, 1], [1.0, 2.0])


def test_downsample():
    assert_array_equal(apply_downsample(2, [1.0, 3.0, 5.0, 7.0]), [2.0, 6.0])
    x = np.array([4.0, -2.0, 9.0])
    assert_array_equal(apply_downsample(1, x), x)
    with pytest.raises(InvalidDimensionError):
        apply_downsample(3, np.ones(4))


class TestCircularConv:
    def test_unit_kernel_is_identity(self):
        x = np.array([1.0, -2.0, 0.5, 3.0])
        assert_array_equal(apply_circular_conv([1.0], x), x)

    def test_impulse_response(self):
        out = apply_circular_conv([0.5, 0.25, 0.25], [1.0, 0.0, 0.0, 0.0])
        # centre tap lands on index 0, neighbours wrap around
        assert_array_equal(out, [0.25, 0.25, 0.0, 0.5])

    def test_kernel_checks(self):
        with pytest.raises(InvalidDimensionError):
            apply_circular_conv([0.5, 0.5], np.ones(4))
        with pytest.raises(InvalidDimensionError):
            apply_circular_conv(np.ones(5) / 5, np.ones(3))

    def test_gaussian_kernel(self):
        k = gaussian_kernel(5, 1.0)
        assert_allclose(k.sum(), 1.0)
        assert np.all(k > 0.0)
        assert_allclose(k, k[::-1])


class TestNonlinearBlur:
    def test_small_saturation_is_linear(self, rng):
        x = rng.standard_normal(16)
        k = gaussian_kernel(3, 1.0)
        assert relative_error(apply_nonlinear_blur(k, 1e-4, x), apply_circular_conv(k, x)) < 1e-6

    def test_unit_kernel_small_signal(self):
        x = np.array([1e-3, -2e-3, 5e-4])
        assert_allclose(apply_nonlinear_blur([1.0], 1.0, x), x, rtol=1e-5)

    def test_saturation_must_be_positive(self):
        with pytest.raises(ValueError):
            apply_nonlinear_blur([1.0], 0.0, np.ones(3))


LINEAR_OPERATORS = [
    IdentityOperator(),
    MaskOperator(np.array([1, 0, 1, 1, 0, 1, 0, 1])),
    DownsampleOperator(2),
    CircularConvOperator(gaussian_kernel(5, 1.2)),
    DenseOperator(np.arange(24, dtype=float).reshape(3, 8) / 10.0),
]


@pytest.mark.parametrize("op", LINEAR_OPERATORS, ids=lambda op: type(op).__name__)
class TestLinearOperators:
    def test_adjoint_identity(self, op, rng):
        x = rng.standard_normal(8)
        c = rng.standard_normal(op.output_dim(8))
        assert_allclose(op.apply(x) @ c, x @ op.adjoint(c, 8), rtol=1e-12, atol=1e-12)

    def test_linearity(self, op, rng):
        a, b = rng.standard_normal(8), rng.standard_normal(8)
        assert_allclose(op.apply(2.0 * a - b), 2.0 * op.apply(a) - op.apply(b), atol=1e-12)

    def test_matrix_matches_apply(self, op, rng):
        x = rng.standard_normal(8)
        assert_allclose(operator_matrix(op, 8) @ x, op.apply(x), atol=1e-12)

    def test_batched_apply(self, op, rng):
        xs = rng.standard_normal((3, 8))
        for i in range(3):
            assert_allclose(op.apply(xs)[i], op.apply(xs[i]), atol=1e-12)


class TestNonlinearOperator:
    def test_vjp_matches_fd(self, rng):
        op = NonlinearBlurOperator(gaussian_kernel(3, 0.8), 2.0)
        for _ in range(5):
            x = rng.standard_normal(10)
            assert vjp_check(op.apply, op.vjp, x, rng) < 1e-4

    def test_kernel_vjp_matches_fd(self, rng):
        x = rng.standard_normal(10)
        err = vjp_check(
            lambda k: NonlinearBlurOperator(k, 2.0).apply(x),
            lambda k, cot: NonlinearBlurOperator(k, 2.0).kernel_vjp(x, cot),
            gaussian_kernel(3, 0.8),
            rng,
        )
        assert err < 1e-4

    def test_matrix_refused(self):
        with pytest.raises(ValueError):
            operator_matrix(NonlinearBlurOperator([1.0], 1.0), 4)
