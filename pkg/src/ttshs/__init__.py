"""Exact moment dynamics for linear time-triggered stochastic hybrid systems."""

__version__ = "0.1.0"

from .errors import TTSHSError
from .model import (
    BurstSize,
    LinearDynamics,
    MemorylessResetFamily,
    TimerResetFamily,
    TTSHSModel,
    ValidationReport,
    make_model,
    validate_model,
)
from .phase_type import Branch, PhaseTypeMixture, RenewalLaw, fit_mixture

__all__ = [
    "__version__",
    "Branch",
    "BurstSize",
    "LinearDynamics",
    "MemorylessResetFamily",
    "PhaseTypeMixture",
    "RenewalLaw",
    "TTSHSError",
    "TTSHSModel",
    "TimerResetFamily",
    "ValidationReport",
    "fit_mixture",
    "make_model",
    "validate_model",
]
