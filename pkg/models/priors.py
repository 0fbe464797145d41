# models/priors.py

"""Score models with exact analytic noise predictions.

Every model exposes the same surface: ``epsilon``, ``score``, ``tweedie`` and
the vector-Jacobian products ``epsilon_vjp`` / ``tweedie_vjp``. Inputs are
either one state of shape ``(d,)`` or a stack ``(n, d)``.
"""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from core_utils.errors import InvalidDimensionError
from core_utils.numerics import Vec, check_same_dim
from core_utils.schedule import NoiseSchedule


class ScoreModel(ABC):
    """Noise-prediction model tied to a schedule.

    Subclasses implement ``epsilon`` and ``epsilon_vjp``; the score and the
    Tweedie estimate follow from them through the schedule.
    """

    def __init__(self, sched: NoiseSchedule, dim: int):
        self.sched = sched
        self.dim = int(dim)

    @abstractmethod
    def epsilon(self, x: Vec, t: int) -> Vec: ...

    @abstractmethod
    def epsilon_vjp(self, x: Vec, t: int, cotangent: Vec) -> Vec:
        """J^T cotangent with J = d epsilon / d x."""

    def score(self, x: Vec, t: int) -> Vec:
        return -self.epsilon(x, t) / self.sched.noise_scale(t)

    def tweedie(self, x: Vec, t: int) -> Vec:
        return tweedie_from_epsilon(self.sched, x, self.epsilon(x, t), t)

    def tweedie_vjp(self, x: Vec, t: int, cotangent: Vec) -> Vec:
        """(d x0hat / d x)^T cotangent = (v - sqrt(1-a) eps_vjp(x, v)) / sqrt(a)."""
        a_sqrt, n_sqrt = self.sched.signal_scale(t), self.sched.noise_scale(t)
        return (cotangent - n_sqrt * self.epsilon_vjp(x, t, cotangent)) / a_sqrt

    def _check(self, x: Vec) -> None:
        if np.shape(x)[-1] != self.dim:
            raise InvalidDimensionError(
                f"{type(self).__name__} expects dimension {self.dim}, got {np.shape(x)[-1]}"
            )


def tweedie_from_epsilon(sched: NoiseSchedule, x: Vec, eps: Vec, t: int) -> Vec:
    return (x - sched.noise_scale(t) * eps) / sched.signal_scale(t)


@dataclass(frozen=True, eq=False)
class GmmPrior:
    """Isotropic Gaussian mixture over R^d."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        var = np.asarray(self.variances, dtype=np.float64)
        if w.ndim != 1 or mu.shape[0] != w.size or var.shape != w.shape:
            raise InvalidDimensionError("weights, means and variances disagree on K")
        if np.any(w <= 0.0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to 1")
        if np.any(var <= 0.0):
            raise ValueError("component variances must be positive")
        for arr in (w, mu, var):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.size

    @classmethod
    def standard_normal(cls, dim: int) -> "GmmPrior":
        return cls(np.ones(1), np.zeros((1, dim)), np.ones(1))

    @classmethod
    def random(
        cls,
        dim: int,
        n_components: int,
        rng: np.random.Generator,
        spread: float = 2.0,
        variance: float = 0.25,
    ) -> "GmmPrior":
        means = spread * rng.standard_normal((n_components, dim)) / math.sqrt(dim)
        return cls(np.full(n_components, 1.0 / n_components), means, np.full(n_components, variance))

    def sample(self, rng: np.random.Generator, n: Optional[int] = None) -> Vec:
        count = 1 if n is None else n
        ks = rng.choice(self.n_components, size=count, p=self.weights)
        z = rng.standard_normal((count, self.dim))
        out = self.means[ks] + np.sqrt(self.variances[ks])[:, None] * z
        return out[0] if n is None else out

    def marginal(self, sched: NoiseSchedule, t: int):
        """Component means and variances of p_t under the VP forward process."""
        a = sched.alpha(t)
        return math.sqrt(a) * self.means, a * self.variances + (1.0 - a)


def gmm_responsibilities(prior: GmmPrior, x: Vec, sched: NoiseSchedule, t: int) -> np.ndarray:
    """Posterior component probabilities of x under p_t, shape ``(..., K)``."""
    means_t, var_t = prior.marginal(sched, t)
    diff = np.asarray(x)[..., None, :] - means_t
    logits = (
        np.log(prior.weights)
        - 0.5 * prior.dim * np.log(2.0 * math.pi * var_t)
        - 0.5 * np.sum(diff * diff, axis=-1) / var_t
    )
    return np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))


class GmmScoreModel(ScoreModel):
    """Exact score of a Gaussian mixture pushed through the forward process.

    With component scores g_k = -(x - m_k)/s_k and responsibilities r_k, the
    score is sum_k r_k g_k and its (symmetric) Jacobian is
    -sum_k r_k/s_k I + sum_k r_k g_k g_k^T - score score^T.
    """

    def __init__(self, prior: GmmPrior, sched: NoiseSchedule):
        super().__init__(sched, prior.dim)
        self.prior = prior

    def _components(self, x: Vec, t: int):
        self._check(x)
        means_t, var_t = self.prior.marginal(self.sched, t)
        r = gmm_responsibilities(self.prior, x, self.sched, t)
        g = -(np.asarray(x)[..., None, :] - means_t) / var_t[:, None]
        return r, g, var_t

    def score(self, x: Vec, t: int) -> Vec:
        r, g, _ = self._components(x, t)
        return np.einsum("...k,...kd->...d", r, g)

    def epsilon(self, x: Vec, t: int) -> Vec:
        return -self.sched.noise_scale(t) * self.score(x, t)

    def score_vjp(self, x: Vec, t: int, cotangent: Vec) -> Vec:
        check_same_dim(x, cotangent, "state and cotangent")
        r, g, var_t = self._components(x, t)
        s = np.einsum("...k,...kd->...d", r, g)
        gc = np.einsum("...kd,...d->...k", g, cotangent)
        out = -np.einsum("...k,k->...", r, 1.0 / var_t)[..., None] * cotangent
        out = out + np.einsum("...k,...kd->...d", r * gc, g)
        return out - s * np.sum(s * cotangent, axis=-1, keepdims=True)

    def epsilon_vjp(self, x: Vec, t: int, cotangent: Vec) -> Vec:
        return -self.sched.noise_scale(t) * self.score_vjp(x, t, cotangent)

    def posterior_mean(self, x: Vec, t: int) -> Vec:
        """E[x0 | x_t] assembled from per-component Gaussian regressions."""
        a = self.sched.alpha(t)
        means_t, var_t = self.prior.marginal(self.sched, t)
        r = gmm_responsibilities(self.prior, x, self.sched, t)
        gain = math.sqrt(a) * self.prior.variances / var_t
        comp = self.prior.means + gain[:, None] * (np.asarray(x)[..., None, :] - means_t)
        return np.einsum("...k,...kd->...d", r, comp)


def standard_normal_model(sched: NoiseSchedule, dim: int) -> GmmScoreModel:
    return GmmScoreModel(GmmPrior.standard_normal(dim), sched)
