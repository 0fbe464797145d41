# core_utils/errors.py

"""Exception hierarchy shared by every package in the project."""

from typing import Optional


class GuidanceError(Exception):
    """Base class for all errors raised by the guidance engine."""


class InvalidDimensionError(GuidanceError, ValueError):
    """A vector or operator has the wrong (or an empty) dimension."""


class InvalidMaskError(GuidanceError, ValueError):
    """A mask contains entries other than 0 and 1."""


class ScheduleConstructionError(GuidanceError, ValueError):
    """A noise schedule violates its invariants."""


class ScheduleOrderError(GuidanceError, ValueError):
    """alpha_bar is not strictly decreasing between the two requested times."""


class DomainError(GuidanceError, ValueError):
    def __init__(self, message: str, t: Optional[int] = None):
        super().__init__(message)
        self.t = t


class InvalidPlanError(GuidanceError, ValueError):
    """A step plan cannot be laid out on the schedule."""


class OptimizationDivergedError(GuidanceError, RuntimeError):
    def __init__(self, message: str, step: int, t=None):
        super().__init__(message)
        self.step = step
        self.t = t


class TrainingDivergedError(GuidanceError, RuntimeError):
    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


class NonFiniteValueError(GuidanceError, ValueError):
    """A vector, or a function under finite differencing, holds inf or NaN."""


class UndefinedKLError(GuidanceError, ValueError):
    """A Gaussian chain step has zero variance, so its KL is undefined."""


class SingularCovarianceError(GuidanceError, ValueError):
    """A covariance matrix has no Cholesky factor."""


class ConfigError(GuidanceError, ValueError):
    def __init__(self, message: str, field: str = ""):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class UsageError(GuidanceError, ValueError):
    """The command line or a sweep grid was used incorrectly."""
