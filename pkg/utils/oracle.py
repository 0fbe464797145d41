# utils/oracle.py

"""Ground truth for validation: conjugate posteriors, closed-form conditional
scores, finite differences, Monte-Carlo chain KL and the squared triangle bound."""

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import simpson
from scipy.linalg import LinAlgError, cho_factor, cho_solve, cholesky

from core_utils.errors import (
    InvalidDimensionError,
    NonFiniteValueError,
    SingularCovarianceError,
    UndefinedKLError,
)
from core_utils.numerics import Vec, check_same_dim
from core_utils.schedule import NoiseSchedule

logger = logging.getLogger(__name__)

QUADRATURE_POINTS = 2001
QUADRATURE_HALF_WIDTH = 8.0
MAX_CHAIN_STEPS = 4


@dataclass(frozen=True, eq=False)
class GaussianDist:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        if cov.shape != (mean.size, mean.size):
            raise InvalidDimensionError(f"covariance {cov.shape} does not match mean of size {mean.size}")
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(cov))):
            raise ValueError("covariance is not symmetric")
        try:
            chol = cholesky(cov, lower=True)
        except LinAlgError as e:
            raise SingularCovarianceError(f"covariance is not positive definite: {e}") from e
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_chol", chol)

    @property
    def dim(self) -> int:
        return self.mean.size

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.mean + rng.standard_normal((n, self.dim)) @ self._chol.T


def gaussian_posterior(
    prior_mean: Vec,
    prior_cov: np.ndarray,
    A: np.ndarray,
    sigma_y: float,
    y: Vec,
) -> GaussianDist:
    """p(x0 | y) for x0 ~ N(m, S) and y = A x0 + sigma_y z."""
    prior_mean = np.atleast_1d(np.asarray(prior_mean, dtype=np.float64))
    prior_cov = np.atleast_2d(np.asarray(prior_cov, dtype=np.float64))
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if sigma_y <= 0.0:
        raise ValueError(f"sigma_y must be positive, got {sigma_y}")
    if A.shape != (y.size, prior_mean.size) or prior_cov.shape != (prior_mean.size, prior_mean.size):
        raise InvalidDimensionError(
            f"inconsistent shapes: A {A.shape}, y {y.shape}, mean {prior_mean.shape}, cov {prior_cov.shape}"
        )

    try:
        prior_factor = cho_factor(prior_cov, lower=True)
    except LinAlgError as e:
        raise SingularCovarianceError(f"prior covariance is singular: {e}") from e
    if not np.any(A):
        return GaussianDist(prior_mean.copy(), prior_cov.copy())

    eye = np.eye(prior_mean.size)
    precision = cho_solve(prior_factor, eye) + A.T @ A / sigma_y**2
    precision = 0.5 * (precision + precision.T)
    post_factor = cho_factor(precision, lower=True)
    cov = cho_solve(post_factor, eye)
    cov = 0.5 * (cov + cov.T)
    mean = cho_solve(post_factor, cho_solve(prior_factor, prior_mean) + A.T @ y / sigma_y**2)
    return GaussianDist(mean, cov)


def conditional_score(
    sched: NoiseSchedule,
    t: int,
    x_t: Vec,
    y: Vec,
    sigma_y: float,
    diag: Optional[Vec] = None,
) -> Vec:
    """grad_x log p(y | x_t) for x0 ~ N(0, I) and y = D x0 + sigma_y z, D diagonal.

    p(y | x_t) = N(sqrt(a) D x_t, D^2 (1 - a) + sigma_y^2) coordinatewise.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    check_same_dim(x_t, y, "state and observation")
    a = sched.alpha(t)
    d = np.ones_like(x_t) if diag is None else np.asarray(diag, dtype=np.float64)
    var = d * d * (1.0 - a) + sigma_y * sigma_y
    return math.sqrt(a) * d * (np.asarray(y) - math.sqrt(a) * d * x_t) / var


def log_likelihood_quadrature(sched: NoiseSchedule, t: int, x_t: float, y: float, sigma_y: float) -> float:
    """log p(y | x_t) in one dimension by integrating p(x0 | x_t) p(y | x0)."""
    a = sched.alpha(t)
    center = math.sqrt(a) * x_t
    prior_var = 1.0 - a
    half = QUADRATURE_HALF_WIDTH * math.sqrt(prior_var + sigma_y * sigma_y)
    grid = np.linspace(center - half, center + half, QUADRATURE_POINTS)
    p_x0 = np.exp(-0.5 * (grid - center) ** 2 / prior_var) / math.sqrt(2.0 * math.pi * prior_var)
    p_y = np.exp(-0.5 * (y - grid) ** 2 / sigma_y**2) / math.sqrt(2.0 * math.pi * sigma_y**2)
    return float(math.log(simpson(p_x0 * p_y, x=grid)))


# --- finite differences -------------------------------------------------------------


def finite_diff_grad(f: Callable[[Vec], float], x: Vec, h: float = 1e-5) -> Vec:
    """Central differences, one coordinate at a time."""
    if h <= 0.0:
        raise ValueError(f"step h must be positive, got {h}")
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        hi, lo = f(x + e), f(x - e)
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise NonFiniteValueError(f"non-finite function value at coordinate {i}")
        grad.flat[i] = (hi - lo) / (2.0 * h)
    return grad


def relative_error(a: Vec, b: Vec, floor: float = 1e-8) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)


def vjp_check(
    fn: Callable[[Vec], Vec],
    vjp: Callable[[Vec, Vec], Vec],
    x: Vec,
    rng: np.random.Generator,
    h: float = 1e-5,
) -> float:
    """Relative error between vjp(x, c) and the FD gradient of <c, fn(x)>, c random."""
    c = rng.standard_normal(np.shape(fn(x)))
    fd = finite_diff_grad(lambda z: float(np.sum(c * fn(z))), x, h)
    return relative_error(vjp(x, c), fd)


# --- chain KL ---------------------------------------------------------------------


@dataclass
class GaussianChain:
    """Markov chain x_{i+1} ~ N(means[i](x_i), sigmas[i]^2 I) started at x_start."""

    x_start: np.ndarray
    means: List[Callable[[np.ndarray], np.ndarray]]
    sigmas: Sequence[float]

    def __len__(self) -> int:
        return len(self.means)


def gaussian_kl(mean_p: Vec, mean_q: Vec, sigma: float) -> np.ndarray:
    """KL(N(mean_p, s^2 I) || N(mean_q, s^2 I)) along the last axis."""
    diff = np.asarray(mean_p) - np.asarray(mean_q)
    return np.sum(diff * diff, axis=-1) / (2.0 * sigma * sigma)


def mc_chain_kl(
    guided: GaussianChain,
    unguided: GaussianChain,
    n_samples: int,
    rng: np.random.Generator,
) -> Tuple[float, float]:
    """Joint KL(guided || unguided) as the sum of per-step analytic KLs along
    guided trajectories; returns (estimate, standard error)."""
    if len(guided) != len(unguided):
        raise ValueError(f"chains have {len(guided)} and {len(unguided)} steps")
    if not 1 <= len(guided) <= MAX_CHAIN_STEPS:
        raise ValueError(f"chain KL supports 1..{MAX_CHAIN_STEPS} steps, got {len(guided)}")
    if not np.allclose(guided.sigmas, unguided.sigmas, rtol=0.0, atol=0.0):
        raise ValueError("both chains must share the per-step sigmas")
    if any(s == 0.0 for s in guided.sigmas):
        raise UndefinedKLError("a step with sigma = 0 has no density; the chain KL is undefined")

    x = np.broadcast_to(np.asarray(guided.x_start, dtype=np.float64), (n_samples, np.size(guided.x_start))).copy()
    total = np.zeros(n_samples)
    for mean_p, mean_q, sigma in zip(guided.means, unguided.means, guided.sigmas):
        mu_p = np.broadcast_to(mean_p(x), x.shape)
        mu_q = np.broadcast_to(mean_q(x), x.shape)
        total += gaussian_kl(mu_p, mu_q, sigma)
        x = mu_p + sigma * rng.standard_normal(x.shape)
    stderr = float(np.std(total, ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else 0.0
    return float(np.mean(total)), stderr


# --- squared triangle bound -------------------------------------------------------


def check_squared_triangle_bound(a: Vec, b: Vec) -> Tuple[bool, bool]:
    """(||a+b||^2 <= ||a||^2 + ||b||^2, ||a+b||^2 <= 2||a||^2 + 2||b||^2)."""
    check_same_dim(a, b, "bound operands")
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    lhs = float(np.sum((a + b) ** 2))
    na, nb = float(a @ a), float(b @ b)
    holds_plain = lhs <= na + nb
    rhs = 2.0 * (na + nb)
    holds_factor2 = lhs <= rhs * (1.0 + 1e-12)
    return holds_plain, holds_factor2


def bound_violation_rate(rng: np.random.Generator, n_pairs: int, dim: int) -> Tuple[float, float]:
    """Fraction of random Gaussian pairs violating each form of the bound."""
    a = rng.standard_normal((n_pairs, dim))
    b = rng.standard_normal((n_pairs, dim))
    lhs = np.sum((a + b) ** 2, axis=1)
    rhs = np.sum(a * a, axis=1) + np.sum(b * b, axis=1)
    plain = np.count_nonzero(lhs > rhs)
    factor2 = np.count_nonzero(lhs > 2.0 * rhs * (1.0 + 1e-12))
    return plain / n_pairs, factor2 / n_pairs
