# core_utils/schedule.py

"""Variance-preserving noise schedules and the DDIM / NDTM coefficients.

``alpha_bar[t]`` is the cumulative signal retention at discrete time t, so
x_t = sqrt(alpha_bar[t]) x_0 + sqrt(1 - alpha_bar[t]) eps. The perturbation
kernel therefore has mean scale sqrt(alpha_bar[t]) and std sqrt(1 - alpha_bar[t]).
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterator, Literal, Tuple

import numpy as np

from core_utils.errors import (
    DomainError,
    InvalidPlanError,
    ScheduleConstructionError,
    ScheduleOrderError,
)

logger = logging.getLogger(__name__)

ScheduleKind = Literal["linear-beta", "cosine"]

# Rounding slack tolerated before a negative direction variance is an error.
_NEG_VARIANCE_SLACK = 1e-12
_COSINE_OFFSET = 0.008
_COSINE_MAX_BETA = 0.999


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    alpha_bar: np.ndarray

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        ab.setflags(write=False)
        object.__setattr__(self, "alpha_bar", ab)
        if ab.ndim != 1 or ab.size < 3:
            raise ScheduleConstructionError("alpha_bar needs T+1 >= 3 entries")
        if not np.all(np.isfinite(ab)) or np.any(ab <= 0.0) or np.any(ab > 1.0):
            raise ScheduleConstructionError("alpha_bar entries must lie in (0, 1]")
        if not np.all(np.diff(ab) < 0.0):
            raise ScheduleConstructionError("alpha_bar must be strictly decreasing in t")
        if not 0.999 < ab[0] <= 1.0:
            raise ScheduleConstructionError(f"alpha_bar[0]={ab[0]:.6g} must lie in (0.999, 1]")
        if not 0.0 < ab[-1] < 0.01:
            raise ScheduleConstructionError(f"alpha_bar[T]={ab[-1]:.6g} must lie in (0, 0.01)")

    @property
    def T(self) -> int:
        return self.alpha_bar.size - 1

    def alpha(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise IndexError(f"timestep {t} outside [0, {self.T}]")
        return float(self.alpha_bar[t])

    def signal_scale(self, t: int) -> float:
        return math.sqrt(self.alpha(t))

    def noise_scale(self, t: int) -> float:
        return math.sqrt(1.0 - self.alpha(t))


def build_schedule(
    kind: ScheduleKind = "linear-beta",
    T: int = 1000,
    beta_min: float = 1e-4,
    beta_max: float = 0.02,
) -> NoiseSchedule:
    """Standard DDPM schedules.

    ``alpha_bar[t] = prod_{s<=t} (1 - beta_s)`` over T+1 betas, so
    ``alpha_bar[0] = 1 - beta_0`` stays strictly below one and Tweedie's division
    is well posed at t=1. For ``cosine`` the betas come from the squared-cosine
    curve, floored at ``beta_min`` and capped at 0.999 (``beta_max`` unused).
    """
    if T < 2:
        raise ScheduleConstructionError(f"T must be >= 2, got {T}")
    if not 0.0 < beta_min < beta_max < 1.0:
        raise ScheduleConstructionError(
            f"need 0 < beta_min < beta_max < 1, got ({beta_min}, {beta_max})"
        )

    if kind == "linear-beta":
        betas = np.linspace(beta_min, beta_max, T + 1, dtype=np.float64)
    elif kind == "cosine":
        steps = np.arange(T + 2, dtype=np.float64) / (T + 1)
        f = np.cos((steps + _COSINE_OFFSET) / (1.0 + _COSINE_OFFSET) * math.pi / 2.0) ** 2
        betas = np.clip(1.0 - f[1:] / f[:-1], beta_min, _COSINE_MAX_BETA)
    else:
        raise ScheduleConstructionError(f"unknown schedule kind {kind!r}")

    alpha_bar = np.cumprod(1.0 - betas)
    logger.debug(f"Built {kind} schedule: T={T}, alpha_bar[T]={alpha_bar[-1]:.3e}")
    return NoiseSchedule(alpha_bar)


def _check_pair(sched: NoiseSchedule, t: int, t_prev: int) -> Tuple[float, float]:
    if not t > t_prev >= 0:
        raise ScheduleOrderError(f"need t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    a_t, a_prev = sched.alpha(t), sched.alpha(t_prev)
    if a_t >= a_prev:
        raise ScheduleOrderError(f"alpha_bar[{t}]={a_t} is not below alpha_bar[{t_prev}]={a_prev}")
    return a_t, a_prev


def ddpm_posterior_std(sched: NoiseSchedule, t: int, t_prev: int) -> float:
    """Ancestral (eta=1) standard deviation of q(x_{t_prev} | x_t, x_0)."""
    a_t, a_prev = _check_pair(sched, t, t_prev)
    return math.sqrt((1.0 - a_prev) * (1.0 - a_t / a_prev) / (1.0 - a_t))


def ddim_sigma(sched: NoiseSchedule, t: int, t_prev: int, eta: float) -> float:
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    return eta * ddpm_posterior_std(sched, t, t_prev)


def ddim_direction_scale(sched: NoiseSchedule, t: int, t_prev: int, sigma: float) -> float:
    """sqrt(1 - alpha_bar[t_prev] - sigma^2), the weight on eps in a DDIM step."""
    var = 1.0 - sched.alpha(t_prev) - sigma * sigma
    if var < 0.0:
        if var < -_NEG_VARIANCE_SLACK:
            raise DomainError(
                f"1 - alpha_bar[{t_prev}] - sigma^2 = {var:.3e} < 0 at t={t}", t=t
            )
        var = 0.0
    return math.sqrt(var)


def ndtm_coefficients(
    sched: NoiseSchedule, t: int, t_prev: int, eta: float, gamma: float
) -> Tuple[float, float]:
    """(kappa, tau) weighting the control and score terms of the NDTM loss."""
    if gamma < 0.0:
        raise ValueError(f"gamma must be non-negative, got {gamma}")
    sigma = ddim_sigma(sched, t, t_prev, eta)
    a_t, a_prev = sched.alpha(t), sched.alpha(t_prev)
    kappa = gamma * (math.sqrt(a_prev) / math.sqrt(a_t))
    tau = ddim_direction_scale(sched, t, t_prev, sigma) - math.sqrt(a_prev * (1.0 - a_t)) / math.sqrt(a_t)
    return kappa, tau


def vp_diffusion_increment(sched: NoiseSchedule, t: int, t_prev: int) -> float:
    """g(t)^2 dt of the reverse VP SDE over the interval (t_prev, t]."""
    a_t, a_prev = _check_pair(sched, t, t_prev)
    return 1.0 - a_t / a_prev


@dataclass(frozen=True)
class StepPlan:
    timesteps: Tuple[int, ...]
    start: int

    def __post_init__(self):
        ts = self.timesteps
        if not ts:
            raise InvalidPlanError("a step plan needs at least one timestep")
        if ts[0] > self.start or ts[-1] < 1:
            raise InvalidPlanError(f"timesteps must lie in [1, {self.start}]")
        if any(a <= b for a, b in zip(ts, ts[1:])):
            raise InvalidPlanError("timesteps must be strictly decreasing")

    def __len__(self) -> int:
        return len(self.timesteps)

    def pairs(self) -> Iterator[Tuple[int, int]]:
        """(t, t_prev) for every step; the last step lands on t_prev = 0."""
        ts = self.timesteps
        for i, t in enumerate(ts):
            yield t, (ts[i + 1] if i + 1 < len(ts) else 0)


def plan_steps(sched: NoiseSchedule, n_steps: int, start: int) -> StepPlan:
    if not 1 <= n_steps:
        raise InvalidPlanError(f"n_steps must be >= 1, got {n_steps}")
    if not 1 <= start <= sched.T:
        raise InvalidPlanError(f"start must lie in [1, {sched.T}], got {start}")
    if n_steps > start:
        raise InvalidPlanError(f"cannot fit {n_steps} steps below start={start}")
    if n_steps == 1:
        return StepPlan(timesteps=(start,), start=start)
    # Spacing >= 1 keeps the rounded grid strictly monotone.
    grid = np.rint(np.linspace(start, 1, n_steps)).astype(int)
    return StepPlan(timesteps=tuple(int(t) for t in grid), start=start)
