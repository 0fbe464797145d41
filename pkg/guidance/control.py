# guidance/control.py

"""Per-timestep control objective and its inner optimization loop.

At each sampling step the state is shifted to z = x_t + gamma u and the
control u minimizes

    w_c ||u||^2 + w_s ||out(z) - out(x_t)||^2 + w_T Phi(estimate(z)),

where ``out`` is the model output (noise prediction, score or velocity) and
``estimate`` is a linear read-out of the final sample (Tweedie's formula for
diffusion models, one-step extrapolation for flows).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from core_utils.errors import InvalidDimensionError, OptimizationDivergedError
from core_utils.numerics import AdamState, Vec, adam_step, as_vec, linear_decay_lr
from core_utils.schedule import NoiseSchedule, ndtm_coefficients
from models.priors import ScoreModel
from tools.terminal_costs import BlindDeconvolutionCost, TerminalCost

logger = logging.getLogger(__name__)

DDIM_WEIGHTING = "ddim"

LossWeight = Union[Literal["ddim"], float]


class GuidanceConfig(BaseModel):
    """Every knob of the guided sampler.

    ``w_score`` / ``w_control`` accept the sentinel ``"ddim"``, meaning the
    tau_t^2 / kappa_t^2 weights of the DDIM bound.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_steps: int = Field(5, ge=0, description="inner optimization steps N per timestep")
    gamma: float = Field(1.0, gt=0.0, description="guidance weight applied to the control")
    w_terminal: float = Field(50.0, ge=0.0)
    w_score: LossWeight = DDIM_WEIGHTING
    w_control: LossWeight = DDIM_WEIGHTING
    eta: float = Field(0.7, ge=0.0, le=1.0)
    start: Optional[int] = Field(None, ge=1, description="truncation time; None starts at T")
    sampling_steps: int = Field(50, ge=1)
    lr: float = Field(0.01, gt=0.0)
    lr_decay: Literal["linear", "none"] = "linear"
    kernel_lr: float = Field(0.01, gt=0.0)
    symmetric_kernel: bool = Field(True, description="project blind kernel estimates onto mirror-symmetric taps")

    def start_time(self, T: int) -> int:
        return T if self.start is None else self.start


@dataclass(frozen=True)
class ControlCostParts:
    c_score: float
    c_control: float
    c_terminal: float

    @property
    def total(self) -> float:
        return self.c_score + self.c_control + self.c_terminal


@dataclass(frozen=True)
class Readout:
    """estimate = (c_state z + c_base x + c_output out(z)) / scale."""

    c_state: float
    c_base: float
    c_output: float
    scale: float = 1.0

    def __call__(self, x: Vec, z: Vec, out: Vec) -> Vec:
        est = self.c_output * out
        if self.c_state:
            est = self.c_state * z + est
        if self.c_base:
            est = est + self.c_base * x
        return est / self.scale


@dataclass(frozen=True)
class Evaluation:
    parts: ControlCostParts
    grad: Vec
    estimate: Vec
    output: Vec


class ControlObjective:
    def __init__(
        self,
        output_fn: Callable[[Vec], Vec],
        output_vjp: Callable[[Vec, Vec], Vec],
        x: Vec,
        gamma: float,
        w_score: float,
        w_control: float,
        w_terminal: float,
        cost: Optional[TerminalCost],
        readout: Readout,
        base_output: Optional[Vec] = None,
    ):
        self.output_fn = output_fn
        self.output_vjp = output_vjp
        self.x = as_vec(x, "state")
        self.gamma = gamma
        self.w_score = w_score
        self.w_control = w_control
        self.w_terminal = w_terminal
        self.cost = cost
        self.readout = readout
        # Unguided output, computed once per timestep.
        self.base_output = output_fn(self.x) if base_output is None else base_output

    @property
    def dim(self) -> int:
        return self.x.shape[-1]

    def _shifted(self, u: Vec) -> Vec:
        if np.shape(u) != self.x.shape:
            raise InvalidDimensionError(f"control shape {np.shape(u)} != state shape {self.x.shape}")
        return self.x + self.gamma * u

    def evaluate(self, u: Vec, with_grad: bool = True) -> Evaluation:
        z = self._shifted(u)
        out = self.output_fn(z)
        delta = out - self.base_output
        estimate = self.readout(self.x, z, out)
        c_score = self.w_score * float(np.sum(delta * delta))
        c_control = self.w_control * float(np.sum(u * u))

        phi_grad = None
        c_terminal = 0.0
        if self.w_terminal and self.cost is not None:
            c_terminal = self.w_terminal * self.cost.value(estimate)
            if with_grad:
                phi_grad = self.w_terminal * self.cost.grad(estimate)
        parts = ControlCostParts(c_score=c_score, c_control=c_control, c_terminal=c_terminal)
        if not with_grad:
            return Evaluation(parts, None, estimate, out)

        r = self.readout
        out_cot = 2.0 * self.w_score * delta
        if phi_grad is not None:
            out_cot = out_cot + (r.c_output / r.scale) * phi_grad
        grad_z = self.output_vjp(z, out_cot)
        if phi_grad is not None and r.c_state:
            grad_z = grad_z + (r.c_state / r.scale) * phi_grad
        grad = 2.0 * self.w_control * u + self.gamma * grad_z
        return Evaluation(parts, grad, estimate, out)


def resolve_weights(sched: NoiseSchedule, t: int, t_prev: int, cfg: GuidanceConfig) -> Tuple[float, float]:
    """(w_s, w_c) with the "ddim" sentinel replaced by (tau_t^2, kappa_t^2)."""
    w_s, w_c = cfg.w_score, cfg.w_control
    if w_s == DDIM_WEIGHTING or w_c == DDIM_WEIGHTING:
        kappa, tau = ndtm_coefficients(sched, t, t_prev, cfg.eta, cfg.gamma)
        if w_s == DDIM_WEIGHTING:
            w_s = tau * tau
        if w_c == DDIM_WEIGHTING:
            w_c = kappa * kappa
    return float(w_s), float(w_c)


def ndtm_objective(
    model: ScoreModel,
    sched: NoiseSchedule,
    cost: Optional[TerminalCost],
    x_t: Vec,
    t: int,
    t_prev: int,
    cfg: GuidanceConfig,
    eps_uncond: Optional[Vec] = None,
) -> ControlObjective:
    w_s, w_c = resolve_weights(sched, t, t_prev, cfg)
    return ControlObjective(
        output_fn=lambda z: model.epsilon(z, t),
        output_vjp=lambda z, c: model.epsilon_vjp(z, t, c),
        x=x_t,
        gamma=cfg.gamma,
        w_score=w_s,
        w_control=w_c,
        w_terminal=cfg.w_terminal,
        cost=cost,
        readout=Readout(c_state=1.0, c_base=0.0, c_output=-sched.noise_scale(t), scale=sched.signal_scale(t)),
        base_output=eps_uncond,
    )


def control_cost(model, sched, cost, x_t, u, t, t_prev, cfg) -> ControlCostParts:
    return ndtm_objective(model, sched, cost, x_t, t, t_prev, cfg).evaluate(u, with_grad=False).parts


def control_grad(model, sched, cost, x_t, u, t, t_prev, cfg) -> Vec:
    return ndtm_objective(model, sched, cost, x_t, t, t_prev, cfg).evaluate(u).grad


def _checked(ev: Evaluation, step: int, t) -> Evaluation:
    if not (math.isfinite(ev.parts.total) and np.all(np.isfinite(ev.grad))):
        logger.error(f"Control optimization diverged at inner step {step}, t={t}")
        raise OptimizationDivergedError(f"non-finite control cost at inner step {step} (t={t})", step=step, t=t)
    return ev


def _step_lr(cfg: GuidanceConfig, i: int) -> float:
    return linear_decay_lr(cfg.lr, i, cfg.n_steps) if cfg.lr_decay == "linear" else cfg.lr


def run_inner_loop(objective: ControlObjective, cfg: GuidanceConfig, t=None) -> Tuple[Vec, List[ControlCostParts]]:
    """N Adam steps from u = 0 with fresh moments; returns u* and the cost at each iterate."""
    u = np.zeros_like(objective.x)
    state: Optional[AdamState] = None
    history: List[ControlCostParts] = []
    for i in range(cfg.n_steps):
        ev = _checked(objective.evaluate(u), i, t)
        history.append(ev.parts)
        u, state = adam_step(u, ev.grad, state, _step_lr(cfg, i), i + 1)
    return u, history


def optimize_control(
    model: ScoreModel,
    sched: NoiseSchedule,
    cost: Optional[TerminalCost],
    x_t: Vec,
    t: int,
    t_prev: int,
    cfg: GuidanceConfig,
    eps_uncond: Optional[Vec] = None,
) -> Tuple[Vec, List[ControlCostParts]]:
    objective = ndtm_objective(model, sched, cost, x_t, t, t_prev, cfg, eps_uncond)
    return run_inner_loop(objective, cfg, t)


@dataclass
class KernelEstimate:
    """Trainable blur kernel; its Adam moments persist across timesteps."""

    taps: np.ndarray
    state: Optional[AdamState] = None
    updates: int = 0
    history: List[np.ndarray] = field(default_factory=list)


def project_kernel(taps: Vec, symmetric: bool = False) -> np.ndarray:
    """Clip to nonnegative taps summing to one (uniform if everything clips).

    ``symmetric`` first averages the taps with their mirror image. A free kernel
    can trade a one-tap shift with the signal at no cost in the residual; a
    symmetric one is pinned to the centre tap.
    """
    taps = np.asarray(taps, dtype=np.float64)
    if symmetric:
        taps = 0.5 * (taps + taps[::-1])
    taps = np.clip(taps, 0.0, None)
    total = taps.sum()
    return taps / total if total > 0.0 else np.full_like(taps, 1.0 / taps.size)


def optimize_control_blind(
    model: ScoreModel,
    sched: NoiseSchedule,
    blind: BlindDeconvolutionCost,
    x_t: Vec,
    t: int,
    t_prev: int,
    cfg: GuidanceConfig,
    kernel: KernelEstimate,
    project: bool = True,
) -> Tuple[Vec, KernelEstimate, List[ControlCostParts]]:
    """Interleaved Adam updates of the control and the blur kernel."""
    eps_uncond = model.epsilon(x_t, t)
    u = np.zeros_like(np.asarray(x_t, dtype=np.float64))
    state: Optional[AdamState] = None
    history: List[ControlCostParts] = []
    for i in range(cfg.n_steps):
        objective = ndtm_objective(model, sched, blind.bind(kernel.taps), x_t, t, t_prev, cfg, eps_uncond)
        ev = _checked(objective.evaluate(u), i, t)
        history.append(ev.parts)
        kernel_grad = cfg.w_terminal * blind.kernel_grad(ev.estimate, kernel.taps)

        u, state = adam_step(u, ev.grad, state, _step_lr(cfg, i), i + 1)
        kernel.updates += 1
        taps, kernel.state = adam_step(kernel.taps, kernel_grad, kernel.state, cfg.kernel_lr, kernel.updates)
        kernel.taps = project_kernel(taps, cfg.symmetric_kernel) if project else taps
    kernel.history.append(kernel.taps.copy())
    return u, kernel, history
