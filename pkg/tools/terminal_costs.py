# tools/terminal_costs.py

"""Terminal costs Phi(x0hat) and their gradients."""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from core_utils.errors import InvalidDimensionError
from core_utils.numerics import Vec, as_vec
from tools.operators import CircularConvOperator, ForwardOperator, NonlinearBlurOperator

DEFAULT_SIGMA_Y = 0.01


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    operator: ForwardOperator
    y: np.ndarray
    sigma_y: float = DEFAULT_SIGMA_Y

    def __post_init__(self):
        if self.sigma_y < 0.0:
            raise ValueError(f"sigma_y must be >= 0, got {self.sigma_y}")
        object.__setattr__(self, "y", as_vec(self.y, "observation"))


class TerminalCost(ABC):
    @abstractmethod
    def value(self, x0hat: Vec) -> float: ...

    @abstractmethod
    def grad(self, x0hat: Vec) -> Vec: ...

    def residual_norm(self, x0hat: Vec) -> float:
        return math.sqrt(self.value(x0hat))


class ResidualCost(TerminalCost):
    """||y - A(x0hat)||^2."""

    def __init__(self, spec: ProblemSpec):
        self.spec = spec

    def _residual(self, x0hat: Vec) -> Vec:
        pred = self.spec.operator.apply(x0hat)
        if pred.shape != self.spec.y.shape:
            raise InvalidDimensionError(
                f"operator output {pred.shape} does not match observation {self.spec.y.shape}"
            )
        return pred - self.spec.y

    def value(self, x0hat: Vec) -> float:
        r = self._residual(x0hat)
        return float(r @ r)

    def grad(self, x0hat: Vec) -> Vec:
        return 2.0 * self.spec.operator.vjp(x0hat, self._residual(x0hat))


def residual_cost(spec: ProblemSpec, x0hat: Vec) -> float:
    return ResidualCost(spec).value(x0hat)


class RandomFeatureExtractor:
    """F(x) = tanh(W x) reshaped to an (m, p) feature map, W fixed and seeded."""

    def __init__(self, dim: int, m: int, p: int, seed: int = 0):
        rng = np.random.Generator(np.random.PCG64(seed))
        self.m, self.p = m, p
        self.weight = rng.standard_normal((m * p, dim)) / math.sqrt(dim)

    def __call__(self, x: Vec) -> np.ndarray:
        return np.tanh(self.weight @ np.asarray(x)).reshape(self.m, self.p)

    def vjp(self, x: Vec, cotangent: np.ndarray) -> Vec:
        th = np.tanh(self.weight @ np.asarray(x))
        return self.weight.T @ (np.ravel(cotangent) * (1.0 - th * th))


def gram(features: np.ndarray) -> np.ndarray:
    return features @ features.T / features.shape[1]


class GramStyleCost(TerminalCost):
    """||G(ref) - G(F(x0hat))||_F^2 with G(F) = F F^T / p."""

    def __init__(self, ref_features: np.ndarray, extractor: RandomFeatureExtractor):
        ref_features = np.asarray(ref_features, dtype=np.float64)
        if ref_features.shape != (extractor.m, extractor.p):
            raise InvalidDimensionError(
                f"reference features {ref_features.shape} != extractor output {(extractor.m, extractor.p)}"
            )
        self.ref_gram = gram(ref_features)
        self.extractor = extractor

    def value(self, x0hat: Vec) -> float:
        diff = gram(self.extractor(x0hat)) - self.ref_gram
        return float(np.sum(diff * diff))

    def grad(self, x0hat: Vec) -> Vec:
        feats = self.extractor(x0hat)
        diff = gram(feats) - self.ref_gram
        return self.extractor.vjp(x0hat, 4.0 / feats.shape[1] * diff @ feats)


def gram_style_cost(ref_features: np.ndarray, extractor: RandomFeatureExtractor, x0hat: Vec) -> float:
    return GramStyleCost(ref_features, extractor).value(x0hat)


def cost_vjp(cost: TerminalCost, x0hat: Vec) -> Vec:
    return cost.grad(x0hat)


class BlindDeconvolutionCost:
    """||y - k * g(x0hat)||^2 with a trainable kernel k.

    ``saturation`` switches g from the identity to tanh(a x)/a, giving the
    blind variant of the non-linear blur.
    """

    def __init__(self, y: Vec, kernel_size: int, saturation: float = 0.0):
        if kernel_size % 2 == 0:
            raise InvalidDimensionError(f"kernel size must be odd, got {kernel_size}")
        self.y = as_vec(y, "observation")
        self.kernel_size = int(kernel_size)
        self.saturation = float(saturation)

    def operator(self, kernel: Vec) -> ForwardOperator:
        if self.saturation > 0.0:
            return NonlinearBlurOperator(kernel, self.saturation)
        return CircularConvOperator(kernel)

    def bind(self, kernel: Vec) -> ResidualCost:
        """Cost in x alone with the kernel frozen at its current value."""
        return ResidualCost(ProblemSpec(self.operator(kernel), self.y))

    def kernel_grad(self, x0hat: Vec, kernel: Vec) -> Vec:
        kernel = np.asarray(kernel, dtype=np.float64)
        if kernel.size != self.kernel_size:
            raise InvalidDimensionError(f"kernel has {kernel.size} taps, expected {self.kernel_size}")
        op = self.operator(kernel)
        return 2.0 * op.kernel_vjp(x0hat, op.apply(x0hat) - self.y)


def blind_cost_kernel_grad(cost: BlindDeconvolutionCost, kernel: Vec, x0hat: Vec) -> Vec:
    return cost.kernel_grad(x0hat, kernel)
