# tools/operators.py

"""Forward operators A of the measurement model y = A(x0) + sigma_y z.

All operators act on the last axis so stacked states ``(n, d)`` work too.
Convolution is circular with the kernel centred on its middle tap.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from core_utils.errors import InvalidDimensionError, InvalidMaskError
from core_utils.numerics import Vec, check_same_dim


class ForwardOperator(ABC):
    linear: bool = True

    @abstractmethod
    def apply(self, x: Vec) -> Vec: ...

    @abstractmethod
    def vjp(self, x: Vec, cotangent: Vec) -> Vec:
        """(dA/dx at x)^T cotangent; independent of x for linear operators."""

    @abstractmethod
    def output_dim(self, dim: int) -> int: ...

    def adjoint(self, cotangent: Vec, dim: int) -> Vec:
        """A^T applied to ``cotangent``; only meaningful for linear operators."""
        return self.vjp(np.zeros(dim), cotangent)


# --- elementary maps ---------------------------------------------------------


def validate_mask(mask: Vec) -> np.ndarray:
    mask = np.asarray(mask, dtype=np.float64)
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise InvalidMaskError("mask entries must be 0 or 1")
    return mask


def apply_mask(mask: Vec, x: Vec) -> Vec:
    mask = validate_mask(mask)
    check_same_dim(mask, x, "mask and signal")
    return mask * x


def apply_downsample(factor: int, x: Vec) -> Vec:
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    if factor < 1 or d % factor:
        raise InvalidDimensionError(f"signal dimension {d} is not divisible by factor {factor}")
    return x.reshape(*x.shape[:-1], d // factor, factor).mean(axis=-1)


def _check_kernel(kernel: Vec, x: Vec) -> np.ndarray:
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 1 or kernel.size % 2 == 0:
        raise InvalidDimensionError(f"blur kernels need an odd number of taps, got {kernel.size}")
    if kernel.size > np.shape(x)[-1]:
        raise InvalidDimensionError(
            f"kernel of length {kernel.size} is longer than the signal ({np.shape(x)[-1]})"
        )
    return kernel


def apply_circular_conv(kernel: Vec, x: Vec) -> Vec:
    """y_i = sum_j k_j x_{i - (j - c)}, indices mod d, c the centre tap."""
    kernel = _check_kernel(kernel, x)
    x = np.asarray(x, dtype=np.float64)
    centre = kernel.size // 2
    out = np.zeros_like(x)
    for j, tap in enumerate(kernel):
        out = out + tap * np.roll(x, j - centre, axis=-1)
    return out


def circular_conv_adjoint(kernel: Vec, cotangent: Vec) -> Vec:
    kernel = _check_kernel(kernel, cotangent)
    centre = kernel.size // 2
    out = np.zeros_like(np.asarray(cotangent, dtype=np.float64))
    for j, tap in enumerate(kernel):
        out = out + tap * np.roll(cotangent, centre - j, axis=-1)
    return out


def circular_conv_kernel_vjp(kernel_size: int, x: Vec, cotangent: Vec) -> Vec:
    """d<cotangent, k * x>/dk: cross-correlation of the cotangent with x."""
    centre = kernel_size // 2
    return np.array(
        [np.sum(cotangent * np.roll(x, j - centre, axis=-1)) for j in range(kernel_size)]
    )


def saturate(x: Vec, a: float) -> Vec:
    return np.tanh(a * np.asarray(x)) / a


def apply_nonlinear_blur(kernel: Vec, a: float, x: Vec) -> Vec:
    """Circular blur of tanh(a x)/a; reduces to the linear blur as a -> 0+."""
    if a <= 0.0:
        raise ValueError(f"saturation must be positive, got {a}")
    return apply_circular_conv(kernel, saturate(x, a))


def gaussian_kernel(size: int, std: float) -> np.ndarray:
    """Normalized nonnegative Gaussian taps."""
    if size % 2 == 0:
        raise InvalidDimensionError(f"kernel size must be odd, got {size}")
    offsets = np.arange(size) - size // 2
    taps = np.exp(-0.5 * (offsets / std) ** 2)
    return taps / taps.sum()


# --- operator objects ----------------------------------------------------------


class IdentityOperator(ForwardOperator):
    def apply(self, x: Vec) -> Vec:
        return np.asarray(x, dtype=np.float64)

    def vjp(self, x: Vec, cotangent: Vec) -> Vec:
        return np.asarray(cotangent, dtype=np.float64)

    def output_dim(self, dim: int) -> int:
        return dim


class MaskOperator(ForwardOperator):
    """Keeps observed entries, zeroes the rest; output keeps dimension d."""

    def __init__(self, mask: Vec):
        self.mask = validate_mask(mask)

    def apply(self, x: Vec) -> Vec:
        return apply_mask(self.mask, x)

    def vjp(self, x: Vec, cotangent: Vec) -> Vec:
        return apply_mask(self.mask, cotangent)

    def output_dim(self, dim: int) -> int:
        return dim


class DownsampleOperator(ForwardOperator):
    def __init__(self, factor: int):
        self.factor = int(factor)

    def apply(self, x: Vec) -> Vec:
        return apply_downsample(self.factor, x)

    def vjp(self, x: Vec, cotangent: Vec) -> Vec:
        return np.repeat(np.asarray(cotangent, dtype=np.float64) / self.factor, self.factor, axis=-1)

    def output_dim(self, dim: int) -> int:
        if dim % self.factor:
            raise InvalidDimensionError(f"signal dimension {dim} is not divisible by factor {self.factor}")
        return dim // self.factor


class CircularConvOperator(ForwardOperator):
    def __init__(self, kernel: Vec):
        self.kernel = np.asarray(kernel, dtype=np.float64)

    def apply(self, x: Vec) -> Vec:
        return apply_circular_conv(self.kernel, x)

    def vjp(self, x: Vec, cotangent: Vec) -> Vec:
        return circular_conv_adjoint(self.kernel, cotangent)

    def kernel_vjp(self, x: Vec, cotangent: Vec) -> Vec:
        return circular_conv_kernel_vjp(self.kernel.size, x, cotangent)

    def output_dim(self, dim: int) -> int:
        return dim


class NonlinearBlurOperator(ForwardOperator):
    """Synthetic smooth non-linear degradation: blur of a saturated signal."""

    linear = False

    def __init__(self, kernel: Vec, saturation: float):
        if saturation <= 0.0:
            raise ValueError(f"saturation must be positive, got {saturation}")
        self.kernel = np.asarray(kernel, dtype=np.float64)
        self.saturation = float(saturation)

    def apply(self, x: Vec) -> Vec:
        return apply_nonlinear_blur(self.kernel, self.saturation, x)

    def vjp(self, x: Vec, cotangent: Vec) -> Vec:
        th = np.tanh(self.saturation * np.asarray(x))
        return circular_conv_adjoint(self.kernel, cotangent) * (1.0 - th * th)

    def kernel_vjp(self, x: Vec, cotangent: Vec) -> Vec:
        return circular_conv_kernel_vjp(self.kernel.size, saturate(x, self.saturation), cotangent)

    def output_dim(self, dim: int) -> int:
        return dim


@dataclass(frozen=True)
class DenseOperator(ForwardOperator):
    """Explicit matrix operator, used by the conjugate-Gaussian oracle problems."""

    matrix: np.ndarray

    def apply(self, x: Vec) -> Vec:
        return np.asarray(x) @ self.matrix.T

    def vjp(self, x: Vec, cotangent: Vec) -> Vec:
        return np.asarray(cotangent) @ self.matrix

    def output_dim(self, dim: int) -> int:
        if self.matrix.shape[1] != dim:
            raise InvalidDimensionError(f"matrix has {self.matrix.shape[1]} columns, signal has {dim}")
        return self.matrix.shape[0]


def operator_matrix(op: ForwardOperator, dim: int) -> np.ndarray:
    """Dense matrix of a linear operator, built column by column."""
    if not op.linear:
        raise ValueError(f"{type(op).__name__} is not linear")
    return op.apply(np.eye(dim)).T
