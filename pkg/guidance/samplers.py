# guidance/samplers.py

"""Guided and unguided generation loops.

* DDIM with per-step NDTM control (``ndtm_sample``), including the blind
  variant that also fits a blur kernel.
* Euler-Maruyama on the reverse VP SDE with continuous-time trajectory
  matching (``sde_sample``).
* Euler integration of a flow ODE with flow trajectory matching
  (``ftm_sample``).

With ``w_terminal = 0`` every guided loop consumes the random stream exactly
like its unguided counterpart and returns bit-identical states.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from core_utils.errors import UndefinedKLError
from core_utils.numerics import Vec, as_vec, gaussian_sample
from core_utils.schedule import (
    NoiseSchedule,
    StepPlan,
    ddim_direction_scale,
    ddim_sigma,
    plan_steps,
    vp_diffusion_increment,
)
from guidance.control import (
    DDIM_WEIGHTING,
    ControlCostParts,
    ControlObjective,
    GuidanceConfig,
    KernelEstimate,
    Readout,
    ndtm_objective,
    optimize_control_blind,
    run_inner_loop,
)
from models.flows import FlowModel
from models.priors import ScoreModel, tweedie_from_epsilon
from tools.terminal_costs import BlindDeconvolutionCost, TerminalCost
from utils.oracle import GaussianChain

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("t", "u_norm", "c_score", "c_control", "c_terminal", "total", "residual")


@dataclass(frozen=True)
class ControlRecord:
    t: float
    u_norm: float
    parts: ControlCostParts
    residual: float
    control: Optional[np.ndarray] = None

    def row(self) -> tuple:
        p = self.parts
        return (self.t, self.u_norm, p.c_score, p.c_control, p.c_terminal, p.total, self.residual)


@dataclass
class ControlTrace:
    records: List[ControlRecord] = field(default_factory=list)
    inner_history: List[List[ControlCostParts]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def rows(self) -> List[tuple]:
        return [r.row() for r in self.records]

    def controls(self) -> np.ndarray:
        return np.stack([r.control for r in self.records])


def _record(trace: ControlTrace, t, u: Vec, objective: ControlObjective, history, cost, keep_controls: bool):
    ev = objective.evaluate(u, with_grad=False)
    residual = cost.residual_norm(ev.estimate) if cost is not None else float("nan")
    trace.records.append(
        ControlRecord(
            t=t,
            u_norm=float(np.linalg.norm(u)),
            parts=ev.parts,
            residual=residual,
            control=u.copy() if keep_controls else None,
        )
    )
    trace.inner_history.append(history)


# --- DDIM -------------------------------------------------------------------------


def ddim_posterior_mean(model: ScoreModel, sched: NoiseSchedule, x: Vec, t: int, t_prev: int, eta: float):
    """Mean and standard deviation of the DDIM transition from x at t to t_prev."""
    sigma = ddim_sigma(sched, t, t_prev, eta)
    eps = model.epsilon(x, t)
    x0 = tweedie_from_epsilon(sched, x, eps, t)
    mean = math.sqrt(sched.alpha(t_prev)) * x0 + ddim_direction_scale(sched, t, t_prev, sigma) * eps
    return mean, sigma


def ddim_step(
    model: ScoreModel,
    sched: NoiseSchedule,
    x_in: Vec,
    t: int,
    t_prev: int,
    eta: float,
    rng: np.random.Generator,
) -> Vec:
    mean, sigma = ddim_posterior_mean(model, sched, x_in, t, t_prev, eta)
    if sigma == 0.0:
        return mean
    return mean + sigma * rng.standard_normal(np.shape(x_in))


def initial_state(
    sched: NoiseSchedule,
    plan: StepPlan,
    shape,
    rng: np.random.Generator,
    x_init: Optional[Vec] = None,
) -> Vec:
    """Pure noise, or x_init diffused forward to the truncation time."""
    if isinstance(shape, int):
        noise = gaussian_sample(rng, shape)
    else:
        noise = rng.standard_normal(shape)
    if x_init is None or plan.start == sched.T:
        return noise
    t0 = plan.timesteps[0]
    return sched.signal_scale(t0) * as_vec(x_init, "initial estimate") + sched.noise_scale(t0) * noise


def ddim_sample(
    model: ScoreModel,
    sched: NoiseSchedule,
    plan: StepPlan,
    eta: float,
    rng: np.random.Generator,
    n: Optional[int] = None,
    x_init: Optional[Vec] = None,
) -> Vec:
    """Unguided DDIM; ``n`` stacks that many trajectories on one stream."""
    shape = model.dim if n is None else (n, model.dim)
    x = initial_state(sched, plan, shape, rng, x_init)
    for t, t_prev in plan.pairs():
        x = ddim_step(model, sched, x, t, t_prev, eta, rng)
    return x


def ndtm_sample(
    model: ScoreModel,
    sched: NoiseSchedule,
    cost: Optional[TerminalCost],
    cfg: GuidanceConfig,
    rng: np.random.Generator,
    x_init: Optional[Vec] = None,
    keep_controls: bool = False,
) -> Tuple[Vec, ControlTrace]:
    """Guided DDIM: optimize u_t, then take the DDIM step from x_t + gamma u_t."""
    plan = plan_steps(sched, cfg.sampling_steps, cfg.start_time(sched.T))
    x = initial_state(sched, plan, model.dim, rng, x_init)
    trace = ControlTrace()
    for t, t_prev in plan.pairs():
        objective = ndtm_objective(model, sched, cost, x, t, t_prev, cfg)
        u, history = run_inner_loop(objective, cfg, t)
        _record(trace, t, u, objective, history, cost, keep_controls)
        x = ddim_step(model, sched, x + cfg.gamma * u, t, t_prev, cfg.eta, rng)
    return x, trace


def ndtm_sample_blind(
    model: ScoreModel,
    sched: NoiseSchedule,
    blind: BlindDeconvolutionCost,
    cfg: GuidanceConfig,
    rng: np.random.Generator,
    kernel_init: Optional[Vec] = None,
    keep_controls: bool = False,
) -> Tuple[Vec, KernelEstimate, ControlTrace]:
    """Guided DDIM that jointly estimates an unknown blur kernel."""
    taps = np.full(blind.kernel_size, 1.0 / blind.kernel_size) if kernel_init is None else np.asarray(kernel_init, dtype=np.float64)
    kernel = KernelEstimate(taps=taps.copy())
    plan = plan_steps(sched, cfg.sampling_steps, cfg.start_time(sched.T))
    x = initial_state(sched, plan, model.dim, rng)
    trace = ControlTrace()
    for t, t_prev in plan.pairs():
        u, kernel, history = optimize_control_blind(model, sched, blind, x, t, t_prev, cfg, kernel)
        bound = blind.bind(kernel.taps)
        _record(trace, t, u, ndtm_objective(model, sched, bound, x, t, t_prev, cfg), history, bound, keep_controls)
        x = ddim_step(model, sched, x + cfg.gamma * u, t, t_prev, cfg.eta, rng)
    return x, kernel, trace


def guided_step_kl(
    model: ScoreModel,
    sched: NoiseSchedule,
    x: Vec,
    u: Vec,
    t: int,
    t_prev: int,
    eta: float,
    gamma: float,
) -> float:
    """KL between the guided and unguided DDIM transitions at one step."""
    mu_guided, sigma = ddim_posterior_mean(model, sched, np.asarray(x) + gamma * u, t, t_prev, eta)
    if sigma == 0.0:
        raise UndefinedKLError(f"the step {t} -> {t_prev} with eta={eta} is deterministic; its KL is undefined")
    mu_free, _ = ddim_posterior_mean(model, sched, x, t, t_prev, eta)
    diff = mu_guided - mu_free
    return float(diff @ diff) / (2.0 * sigma * sigma)


def ddim_gaussian_chain(
    model: ScoreModel,
    sched: NoiseSchedule,
    plan: StepPlan,
    eta: float,
    gamma: float,
    x_start: Vec,
    controls: Optional[List[Vec]] = None,
) -> GaussianChain:
    """DDIM transitions as a Gaussian chain; ``controls`` shift the model input."""
    means, sigmas = [], []
    for i, (t, t_prev) in enumerate(plan.pairs()):
        shift = 0.0 if controls is None else gamma * np.asarray(controls[i])

        def mean_fn(x, t=t, t_prev=t_prev, shift=shift):
            return ddim_posterior_mean(model, sched, x + shift, t, t_prev, eta)[0]

        means.append(mean_fn)
        sigmas.append(ddim_sigma(sched, t, t_prev, eta))
    return GaussianChain(x_start=np.asarray(x_start, dtype=np.float64), means=means, sigmas=sigmas)


# --- reverse SDE ------------------------------------------------------------------


def sde_step_ctdtm(
    model: ScoreModel,
    sched: NoiseSchedule,
    x: Vec,
    u: Vec,
    t: int,
    t_prev: int,
    gamma: float,
    rng: np.random.Generator,
) -> Vec:
    """Euler-Maruyama step of the reverse VP SDE driven by score(x + gamma u).

    With g^2 dt = 1 - alpha_bar[t]/alpha_bar[t_prev] the step reads
    x + (x/2 + score) g^2 dt + g sqrt(dt) z; the step onto t_prev = 0 is noiseless.
    """
    g2dt = vp_diffusion_increment(sched, t, t_prev)
    score = model.score(np.asarray(x) + gamma * np.asarray(u), t)
    out = x + (0.5 * x + score) * g2dt
    if t_prev == 0:
        return out
    return out + math.sqrt(g2dt) * rng.standard_normal(np.shape(x))


def ctdtm_objective(
    model: ScoreModel,
    sched: NoiseSchedule,
    cost: Optional[TerminalCost],
    x: Vec,
    t: int,
    t_prev: int,
    cfg: GuidanceConfig,
) -> ControlObjective:
    """(g^2 dt / 2) ||s(x + gamma u) - s(x)||^2 + w_T Phi(tweedie(x + gamma u))."""
    g2dt = vp_diffusion_increment(sched, t, t_prev)
    w_c = 0.0 if cfg.w_control == DDIM_WEIGHTING else float(cfg.w_control)
    return ControlObjective(
        output_fn=lambda z: model.score(z, t),
        output_vjp=lambda z, c: -model.epsilon_vjp(z, t, c) / sched.noise_scale(t),
        x=x,
        gamma=cfg.gamma,
        w_score=0.5 * g2dt,
        w_control=w_c,
        w_terminal=cfg.w_terminal,
        cost=cost,
        readout=Readout(c_state=1.0, c_base=0.0, c_output=1.0 - sched.alpha(t), scale=sched.signal_scale(t)),
    )


def sde_sample(
    model: ScoreModel,
    sched: NoiseSchedule,
    cost: Optional[TerminalCost],
    cfg: GuidanceConfig,
    rng: np.random.Generator,
    x_init: Optional[Vec] = None,
    keep_controls: bool = False,
) -> Tuple[Vec, ControlTrace]:
    plan = plan_steps(sched, cfg.sampling_steps, cfg.start_time(sched.T))
    x = initial_state(sched, plan, model.dim, rng, x_init)
    trace = ControlTrace()
    for t, t_prev in plan.pairs():
        objective = ctdtm_objective(model, sched, cost, x, t, t_prev, cfg)
        u, history = run_inner_loop(objective, cfg, t)
        _record(trace, t, u, objective, history, cost, keep_controls)
        x = sde_step_ctdtm(model, sched, x, u, t, t_prev, cfg.gamma, rng)
    return x, trace


def sde_sample_unguided(
    model: ScoreModel,
    sched: NoiseSchedule,
    plan: StepPlan,
    rng: np.random.Generator,
    n: Optional[int] = None,
) -> Vec:
    shape = model.dim if n is None else (n, model.dim)
    x = initial_state(sched, plan, shape, rng)
    zero = np.zeros(shape)
    for t, t_prev in plan.pairs():
        x = sde_step_ctdtm(model, sched, x, zero, t, t_prev, 1.0, rng)
    return x


# --- flow ODE ----------------------------------------------------------------------


def flow_times(n_steps: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, n_steps + 1)


def ftm_objective(flow: FlowModel, cost: Optional[TerminalCost], x: Vec, t: float, dt: float, cfg: GuidanceConfig):
    """||v(x + gamma u) - v(x)||^2 dt + w_T Phi(x + (1 - t) v(x + gamma u))."""
    w_c = 0.0 if cfg.w_control == DDIM_WEIGHTING else float(cfg.w_control)
    return ControlObjective(
        output_fn=lambda z: flow.velocity(z, t),
        output_vjp=lambda z, c: flow.velocity_vjp(z, t, c),
        x=x,
        gamma=cfg.gamma,
        w_score=dt,
        w_control=w_c,
        w_terminal=cfg.w_terminal,
        cost=cost,
        readout=Readout(c_state=0.0, c_base=1.0, c_output=1.0 - t),
    )


def ftm_sample(
    flow: FlowModel,
    cost: Optional[TerminalCost],
    cfg: GuidanceConfig,
    rng: np.random.Generator,
    keep_controls: bool = False,
) -> Tuple[Vec, ControlTrace]:
    times = flow_times(cfg.sampling_steps)
    x = gaussian_sample(rng, flow.dim)
    trace = ControlTrace()
    for t, t_next in zip(times[:-1], times[1:]):
        dt = t_next - t
        objective = ftm_objective(flow, cost, x, t, dt, cfg)
        u, history = run_inner_loop(objective, cfg, t)
        _record(trace, float(t), u, objective, history, cost, keep_controls)
        x = x + dt * flow.velocity(x + cfg.gamma * u, t)
    return x, trace


def flow_sample(flow: FlowModel, n_steps: int, rng: np.random.Generator, n: Optional[int] = None) -> Vec:
    times = flow_times(n_steps)
    x = gaussian_sample(rng, flow.dim) if n is None else rng.standard_normal((n, flow.dim))
    for t, t_next in zip(times[:-1], times[1:]):
        x = x + (t_next - t) * flow.velocity(x, t)
    return x
