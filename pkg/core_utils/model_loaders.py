# core_utils/model_loaders.py

"""Builds schedules, priors, flows and inverse problems from a run config."""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from core_utils.errors import ConfigError
from core_utils.numerics import Vec, make_rng
from core_utils.schedule import NoiseSchedule, build_schedule
from models.flows import GmmFlow
from models.mlp_denoiser import MlpDenoiser
from models.priors import GmmPrior, GmmScoreModel, ScoreModel
from tools.operators import (
    CircularConvOperator,
    DownsampleOperator,
    ForwardOperator,
    IdentityOperator,
    MaskOperator,
    NonlinearBlurOperator,
    gaussian_kernel,
)
from tools.terminal_costs import (
    BlindDeconvolutionCost,
    GramStyleCost,
    ProblemSpec,
    RandomFeatureExtractor,
    ResidualCost,
    TerminalCost,
)

logger = logging.getLogger(__name__)


def load_schedule(spec) -> NoiseSchedule:
    return build_schedule(spec.kind, spec.T, spec.beta_min, spec.beta_max)


def load_prior(spec) -> GmmPrior:
    """The data distribution; an mlp prior is trained on standard-normal data."""
    if spec.kind == "gmm":
        return GmmPrior.random(spec.dim, spec.n_components, make_rng(spec.seed), spec.spread, spec.variance)
    return GmmPrior.standard_normal(spec.dim)


def load_score_model(spec, sched: NoiseSchedule) -> ScoreModel:
    if spec.kind == "mlp":
        try:
            model = MlpDenoiser.load(spec.model_file, sched)
        except (OSError, ValueError) as e:
            raise ConfigError(f"cannot load denoiser: {e}", field="prior.model_file") from e
        if model.dim != spec.dim:
            raise ConfigError(f"denoiser has dimension {model.dim}, prior dim is {spec.dim}", field="prior.dim")
        logger.info(f"Loaded MLP denoiser from {spec.model_file} (d={model.dim}, h={model.hidden})")
        return model
    return GmmScoreModel(load_prior(spec), sched)


def load_flow(spec) -> GmmFlow:
    return GmmFlow(load_prior(spec))


def load_operator(spec, dim: int) -> ForwardOperator:
    kind = spec.kind
    if kind in ("identity", "style"):
        return IdentityOperator()
    if kind == "mask":
        if spec.mask is not None:
            return MaskOperator(spec.mask)
        mask = np.zeros(dim)
        mask[list(spec.observed)] = 1.0
        return MaskOperator(mask)
    if kind == "downsample":
        return DownsampleOperator(spec.factor)
    kernel = gaussian_kernel(spec.kernel_size, spec.kernel_std)
    if kind in ("blur", "blind-blur"):
        return CircularConvOperator(kernel)
    if kind == "nonlinear-blur":
        return NonlinearBlurOperator(kernel, spec.saturation)
    raise ValueError(f"unknown operator kind {kind!r}")


@dataclass
class Problem:
    """A synthesized inverse problem with its ground truth."""

    truth: np.ndarray
    y: np.ndarray
    cost: TerminalCost
    spec: Optional[ProblemSpec] = None
    blind: Optional[BlindDeconvolutionCost] = None
    true_kernel: Optional[np.ndarray] = None

    def initial_estimate(self) -> Optional[Vec]:
        """A^T y for linear problems, used to seed truncated sampling."""
        if self.spec is None or not self.spec.operator.linear:
            return None
        return self.spec.operator.adjoint(self.y, self.truth.size)


def load_problem(cfg) -> Problem:
    """Ground truth from the prior, then y = A(x0) + sigma_y z; both seeded by truth_seed."""
    prior = load_prior(cfg.prior)
    rng = make_rng(cfg.problem.truth_seed)
    truth = prior.sample(rng)
    op_spec = cfg.problem.operator
    sigma_y = cfg.problem.sigma_y

    if op_spec.kind == "style":
        extractor = RandomFeatureExtractor(prior.dim, op_spec.features, op_spec.feature_width, op_spec.feature_seed)
        ref = extractor(truth)
        return Problem(truth=truth, y=ref.ravel(), cost=GramStyleCost(ref, extractor))

    operator = load_operator(op_spec, prior.dim)
    clean = operator.apply(truth)
    y = clean + sigma_y * rng.standard_normal(clean.shape)
    spec = ProblemSpec(operator, y, sigma_y)
    if op_spec.kind == "blind-blur":
        blind = BlindDeconvolutionCost(y, op_spec.kernel_size)
        return Problem(truth=truth, y=y, cost=ResidualCost(spec), spec=spec, blind=blind, true_kernel=operator.kernel)
    return Problem(truth=truth, y=y, cost=ResidualCost(spec), spec=spec)
