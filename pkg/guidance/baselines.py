# guidance/baselines.py

"""Prior guidance methods expressed inside the trajectory-matching framework.

* classifier guidance: s(x_t) + rho * grad log p(y | x_t)
* DPS: a normalized gradient step on ||y - A(tweedie(x_t))||^2
* RB-Modulation: NDTM with the score and control regularizers switched off
* linear control: the closed-form optimal control for a standard-normal prior
  and Gaussian likelihood, which reduces to classifier guidance
"""

import logging
import math
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from core_utils.numerics import Vec, check_same_dim
from core_utils.schedule import NoiseSchedule, StepPlan
from guidance.control import GuidanceConfig
from guidance.samplers import ddim_posterior_mean, ddim_step, initial_state
from models.priors import ScoreModel
from tools.terminal_costs import ProblemSpec, ResidualCost
from utils.oracle import conditional_score

logger = logging.getLogger(__name__)


class LinearControlConfig(BaseModel):
    """Guidance weight rho_t = g * w_T of the closed-form linear control."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    g: float = Field(1.0, description="diffusion coefficient g(t), held constant")
    w_terminal: float = Field(1.0, ge=0.0)
    log_likelihood: bool = Field(True, description="False returns the non-log gradient, for inspection only")

    @property
    def rho(self) -> float:
        return self.g * self.w_terminal


def classifier_guidance_score(model: ScoreModel, x: Vec, t: int, likelihood_score: Vec, rho: float) -> Vec:
    check_same_dim(x, likelihood_score, "state and likelihood score")
    return model.score(x, t) + rho * np.asarray(likelihood_score)


# --- DPS --------------------------------------------------------------------------


def dps_gradient(model: ScoreModel, spec: ProblemSpec, x_t: Vec, t: int) -> Tuple[Vec, float]:
    """grad_x ||y - A(tweedie(x))||^2 at x_t, and the residual norm at tweedie(x_t)."""
    cost = ResidualCost(spec)
    x0hat = model.tweedie(x_t, t)
    residual = cost.residual_norm(x0hat)
    return model.tweedie_vjp(x_t, t, cost.grad(x0hat)), residual


def dps_step_size(alpha: float, residual: float) -> float:
    """zeta = alpha / ||y - A(x0hat)||^2; zero when the residual vanishes."""
    if residual == 0.0:
        return 0.0
    return alpha / (residual * residual)


def dps_direction(
    model: ScoreModel,
    sched: NoiseSchedule,
    spec: ProblemSpec,
    x_t: Vec,
    t: int,
    alpha: float = 1.0,
) -> Vec:
    grad, residual = dps_gradient(model, spec, x_t, t)
    zeta = dps_step_size(alpha, residual)
    if zeta == 0.0:
        return np.zeros_like(np.asarray(x_t, dtype=np.float64))
    return -zeta * grad


def dps_sample(
    model: ScoreModel,
    sched: NoiseSchedule,
    spec: ProblemSpec,
    plan: StepPlan,
    eta: float,
    rng: np.random.Generator,
    alpha: float = 1.0,
) -> Vec:
    """DDIM step followed by the DPS correction evaluated at the pre-step state."""
    x = initial_state(sched, plan, model.dim, rng)
    for t, t_prev in plan.pairs():
        direction = dps_direction(model, sched, spec, x, t, alpha)
        x = ddim_step(model, sched, x, t, t_prev, eta, rng) + direction
    return x


# --- RB-Modulation ----------------------------------------------------------------


def rb_modulation_config(base: GuidanceConfig) -> GuidanceConfig:
    return base.model_copy(update={"w_score": 0.0, "w_control": 0.0, "gamma": 1.0})


# --- linear control ---------------------------------------------------------------


def gaussian_likelihood_score(
    sched: NoiseSchedule,
    t: int,
    x_t: Vec,
    y: Vec,
    sigma_y: float,
    log_likelihood: bool = True,
    diag: Optional[Vec] = None,
) -> Vec:
    """grad_x log p(y | x_t) (or grad_x p(y | x_t)) for x0 ~ N(0, I), y = D x0 + sigma_y z."""
    score = conditional_score(sched, t, x_t, y, sigma_y, diag)
    if log_likelihood:
        return score
    # grad p = p * grad log p, with p the product of per-coordinate Gaussian densities.
    a = sched.alpha(t)
    d = np.ones_like(np.asarray(x_t, dtype=np.float64)) if diag is None else np.asarray(diag, dtype=np.float64)
    var = d * d * (1.0 - a) + sigma_y * sigma_y
    r = np.asarray(y) - math.sqrt(a) * d * np.asarray(x_t)
    density = float(np.prod(np.exp(-0.5 * r * r / var) / np.sqrt(2.0 * math.pi * var)))
    return density * score


def linear_optimal_control_gaussian(
    sched: NoiseSchedule,
    t: int,
    x_t: Vec,
    y: Vec,
    sigma_y: float,
    w_T: float,
    g: float = 1.0,
    log_likelihood: bool = True,
    diag: Optional[Vec] = None,
) -> Vec:
    """u*_t = g * w_T * grad log p(y | x_t) under the Gaussian marginal N(sqrt(a) x_t, 1 - a + sigma_y^2)."""
    return g * w_T * gaussian_likelihood_score(sched, t, x_t, y, sigma_y, log_likelihood, diag)


def linear_cg_sample(
    model: ScoreModel,
    sched: NoiseSchedule,
    y: Vec,
    sigma_y: float,
    cfg: LinearControlConfig,
    plan: StepPlan,
    eta: float,
    rng: np.random.Generator,
    diag: Optional[Vec] = None,
) -> Vec:
    """DDIM driven by the classifier-guided score s + rho grad log p(y | x_t).

    The guided score enters through eps = -sqrt(1 - a) * score, so the step
    reuses the DDIM transition with a shifted mean.
    """
    x = initial_state(sched, plan, model.dim, rng)
    for t, t_prev in plan.pairs():
        likelihood = gaussian_likelihood_score(sched, t, x, y, sigma_y, cfg.log_likelihood, diag)
        mean, sigma = ddim_posterior_mean(model, sched, x, t, t_prev, eta)
        # Replacing eps by eps - sqrt(1-a) rho L shifts x0hat and the direction term.
        shift = cfg.rho * sched.noise_scale(t) * likelihood
        a_t, a_prev = sched.alpha(t), sched.alpha(t_prev)
        direction = math.sqrt(max(1.0 - a_prev - sigma * sigma, 0.0))
        mean = mean + (math.sqrt(a_prev) * sched.noise_scale(t) / math.sqrt(a_t) - direction) * shift
        x = mean if sigma == 0.0 else mean + sigma * rng.standard_normal(model.dim)
    return x
