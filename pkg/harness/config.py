# harness/config.py

"""Run configuration: one JSON file validated by pydantic models.

Minimal example::

    {
      "schema_version": 1,
      "prior": {"kind": "standard-normal", "dim": 2},
      "problem": {"operator": {"kind": "mask", "observed": [0]}, "sigma_y": 0.1},
      "guidance": {"preset": "conjugate"},
      "method": "ndtm"
    }
"""

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from core_utils.errors import ConfigError
from guidance.control import GuidanceConfig
from harness.presets import apply_preset

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_OUTPUT_DIR = "runs"

Method = Literal["ndtm", "rb_mod", "dps", "linear_cg", "unguided", "ctdtm", "ftm"]
OperatorKind = Literal["identity", "mask", "downsample", "blur", "nonlinear-blur", "blind-blur", "style"]


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class PriorSpec(_Section):
    kind: Literal["standard-normal", "gmm", "mlp"] = "standard-normal"
    dim: int = Field(2, ge=1)
    n_components: int = Field(4, ge=1)
    spread: float = Field(2.0, gt=0.0)
    variance: float = Field(0.25, gt=0.0)
    seed: int = Field(0, ge=0, description="seed of the random mixture means")
    model_file: Optional[str] = None


class ScheduleSpec(_Section):
    kind: Literal["linear-beta", "cosine"] = "linear-beta"
    T: int = Field(1000, ge=2)
    beta_min: float = Field(1e-4, gt=0.0)
    beta_max: float = Field(0.02, lt=1.0)


class OperatorSpec(_Section):
    kind: OperatorKind = "identity"
    observed: Optional[List[int]] = Field(None, description="indices kept by the mask")
    mask: Optional[List[float]] = None
    factor: int = Field(2, ge=1)
    kernel_size: int = Field(5, ge=1)
    kernel_std: float = Field(1.0, gt=0.0)
    saturation: float = Field(1.0, gt=0.0)
    features: int = Field(4, ge=1, description="style feature channels m")
    feature_width: int = Field(8, ge=1, description="style feature width p")
    feature_seed: int = 0


class ProblemConfig(_Section):
    operator: OperatorSpec = Field(default_factory=OperatorSpec)
    sigma_y: float = Field(0.01, ge=0.0)
    truth_seed: int = Field(0, ge=0)
    init_from_adjoint: bool = Field(False, description="start from A^T y diffused to the truncation time")


class SweepSpec(_Section):
    param: Literal["w_T", "gamma", "N", "steps"]
    values: List[float]
    seeds: List[int] = Field(default_factory=lambda: [0])


class TrainSpec(_Section):
    n_data: int = Field(4096, ge=1)
    hidden: int = Field(64, ge=1)
    epochs: int = Field(200, ge=1)
    lr: float = Field(1e-3, gt=0.0)
    batch_size: int = Field(128, ge=1)
    model_file: str = "mlp_denoiser.bin"


class RunConfig(_Section):
    schema_version: Literal[1]
    prior: PriorSpec = Field(default_factory=PriorSpec)
    schedule: ScheduleSpec = Field(default_factory=ScheduleSpec)
    problem: ProblemConfig = Field(default_factory=ProblemConfig)
    guidance: GuidanceConfig = Field(default_factory=GuidanceConfig)
    method: Method = "ndtm"
    n_trajectories: int = Field(4, ge=1)
    n_samples: int = Field(1000, ge=1, description="population size of the sample subcommand")
    reference_samples: int = Field(500, ge=0, description="analytic posterior draws for energy distance")
    workers: int = Field(4, ge=1)
    save_controls: bool = Field(False, description="write every trajectory's per-step controls to controls.bin")
    dps_alpha: float = Field(1.0, gt=0.0)
    seed: int = Field(0, ge=0)
    output_dir: Optional[str] = None
    sweep: Optional[SweepSpec] = None
    train: TrainSpec = Field(default_factory=TrainSpec)

    @field_validator("guidance", mode="before")
    @classmethod
    def _expand_preset(cls, value: Any) -> Any:
        if isinstance(value, dict):
            return apply_preset(value)
        return value

    def resolved_output_dir(self) -> Path:
        return Path(self.output_dir or os.getenv("NDTM_OUTPUT_DIR") or DEFAULT_OUTPUT_DIR)


def _field_path(loc) -> str:
    return ".".join(str(part) for part in loc)


def _check_consistency(cfg: RunConfig) -> None:
    dim = cfg.prior.dim
    op = cfg.problem.operator
    if cfg.schedule.beta_min >= cfg.schedule.beta_max:
        raise ConfigError("beta_min must be below beta_max", field="schedule.beta_min")
    if cfg.prior.kind == "mlp":
        if not cfg.prior.model_file:
            raise ConfigError("an mlp prior needs model_file", field="prior.model_file")
        if not Path(cfg.prior.model_file).is_file():
            raise ConfigError(f"no such file {cfg.prior.model_file}", field="prior.model_file")
    if op.kind == "mask":
        if (op.mask is None) == (op.observed is None):
            raise ConfigError("give exactly one of mask or observed", field="problem.operator.mask")
        if op.mask is not None and len(op.mask) != dim:
            raise ConfigError(f"mask has {len(op.mask)} entries, prior dim is {dim}", field="problem.operator.mask")
        if op.observed is not None and any(not 0 <= i < dim for i in op.observed):
            raise ConfigError(f"observed indices must lie in [0, {dim})", field="problem.operator.observed")
    if op.kind == "downsample" and dim % op.factor:
        raise ConfigError(f"factor {op.factor} does not divide dim {dim}", field="problem.operator.factor")
    if op.kind in ("blur", "nonlinear-blur", "blind-blur"):
        if op.kernel_size % 2 == 0 or op.kernel_size > dim:
            raise ConfigError(
                f"kernel_size must be odd and at most dim {dim}", field="problem.operator.kernel_size"
            )
    start = cfg.guidance.start
    if start is not None and start > cfg.schedule.T:
        raise ConfigError(f"start {start} exceeds T={cfg.schedule.T}", field="guidance.start")
    if cfg.guidance.sampling_steps > cfg.guidance.start_time(cfg.schedule.T):
        raise ConfigError("more sampling steps than timesteps below start", field="guidance.sampling_steps")
    if cfg.method == "ftm" and cfg.prior.kind == "mlp":
        raise ConfigError("flow sampling needs an analytic prior", field="method")


def parse_config(data: Dict[str, Any]) -> RunConfig:
    """Validate a decoded config; every failure becomes a ConfigError naming the field."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    if "schema_version" not in data:
        raise ConfigError("missing mandatory key", field="schema_version")
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        # Errors raised by our own validators (unknown preset) keep their field.
        original = first.get("ctx", {}).get("error")
        if isinstance(original, ConfigError):
            raise original from e
        raise ConfigError(first["msg"], field=_field_path(first["loc"])) from e
    _check_consistency(cfg)
    return cfg


def apply_overrides(data: Dict[str, Any], **overrides: Any) -> Dict[str, Any]:
    """Overlay CLI flags (seed, output_dir, method) that were actually given."""
    data = dict(data)
    for key, value in overrides.items():
        if value is not None:
            data[key] = value
    return data


def load_config(path: Union[str, Path], **overrides: Any) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {path}: {e}") from e
    cfg = parse_config(apply_overrides(data, **overrides))
    logger.info(f"Loaded config {path} (method={cfg.method}, seed={cfg.seed})")
    return cfg
