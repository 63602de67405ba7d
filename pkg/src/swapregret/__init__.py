"""Swap-regret learning, equilibrium dynamics and their brute-force checks."""

from .errors import (CapacityError, ConfigurationError, LifecycleError, ParameterError,
                     StructuralError, SwapRegretError, ValidationError, WidthViolationError)
from .multiscale import MultiScaleConfig, MultiScaleLearner, eq3_bound, msmwu_from_epsilon
from .regret import (MwuLearner, PlayRecord, RegretReport, UniformLearner, external_regret,
                     regret_report, swap_regret)

__version__ = "0.1.0"

__all__ = [
    "CapacityError", "ConfigurationError", "LifecycleError", "ParameterError",
    "StructuralError", "SwapRegretError", "ValidationError", "WidthViolationError",
    "MultiScaleConfig", "MultiScaleLearner", "eq3_bound", "msmwu_from_epsilon",
    "MwuLearner", "PlayRecord", "RegretReport", "UniformLearner", "external_regret",
    "regret_report", "swap_regret",
]
