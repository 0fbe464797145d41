# core_utils/numerics.py

"""Dense vectors, seeded random streams and the Adam update.

Vectors are plain float64 numpy arrays. Every stochastic routine takes an
explicit ``numpy.random.Generator``; there is no module-level random state.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from core_utils.errors import InvalidDimensionError, NonFiniteValueError

Vec = np.ndarray

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def as_vec(data, name: str = "vector") -> Vec:
    """Coerce ``data`` to a finite float64 array with at least one entry."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.shape[-1] == 0:
        raise InvalidDimensionError(f"{name} must have dimension >= 1")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValueError(f"{name} contains non-finite entries")
    return arr


def check_same_dim(a: Vec, b: Vec, what: str = "operands") -> None:
    if np.shape(a)[-1] != np.shape(b)[-1]:
        raise InvalidDimensionError(
            f"dimension mismatch between {what}: {np.shape(a)[-1]} != {np.shape(b)[-1]}"
        )


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for trajectory ``index`` of a run seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((int(seed), int(index)))))


def gaussian_sample(rng: np.random.Generator, dim: int) -> Vec:
    if dim < 1:
        raise InvalidDimensionError(f"cannot draw a {dim}-dimensional Gaussian vector")
    return rng.standard_normal(int(dim))


@dataclass
class AdamState:
    m: Vec
    v: Vec

    @classmethod
    def zeros_like(cls, param: Vec) -> "AdamState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param))


def adam_step(
    param: Vec,
    grad: Vec,
    state: Optional[AdamState],
    lr: float,
    step_index: int,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> tuple:
    """One bias-corrected Adam update.

    ``step_index`` counts updates starting at 1. Returns the new parameter and
    the new moment state; the inputs are left untouched.
    """
    if np.shape(param) != np.shape(grad):
        raise InvalidDimensionError(
            f"parameter shape {np.shape(param)} does not match gradient shape {np.shape(grad)}"
        )
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if step_index < 1:
        raise ValueError(f"step_index counts from 1, got {step_index}")
    if state is None:
        state = AdamState.zeros_like(param)

    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * (grad * grad)
    m_hat = m / (1.0 - beta1**step_index)
    v_hat = v / (1.0 - beta2**step_index)
    new_param = param - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_param, AdamState(m=m, v=v)


def linear_decay_lr(lr: float, step: int, n_steps: int) -> float:
    """Learning rate for inner step ``step`` (0-based) of ``n_steps``: lr * (1 - i/N)."""
    return lr * (1.0 - step / n_steps)
