"""Adaptive multi-stage GLR trial designs.

Calibrates three- and four-stage generalized-likelihood-ratio tests for
one-parameter exponential-family endpoints, computes exact and simulated
operating characteristics, benchmarks against standard comparator designs,
and conducts live trials over a CLI or HTTP service.
"""

from .design import CalibrationMethod, Decision, DesignSpec, Thresholds, TrialState, decide, replay, step
from .errors import (
    GlrAdaptError,
    InfeasibilityError,
    NumericError,
    PrecisionError,
    SchemaError,
)
from .models import (
    Bernoulli,
    Model,
    NormalKnownVar,
    StageStat,
    TwoArmBernoulli,
    TwoSampleNormal,
    TwoSampleNormalUnknownVar,
    model_from_dict,
)

__version__ = "0.1.0"

__all__ = [
    "Bernoulli",
    "CalibrationMethod",
    "Decision",
    "DesignSpec",
    "GlrAdaptError",
    "InfeasibilityError",
    "Model",
    "NormalKnownVar",
    "NumericError",
    "PrecisionError",
    "SchemaError",
    "StageStat",
    "Thresholds",
    "TrialState",
    "TwoArmBernoulli",
    "TwoSampleNormal",
    "TwoSampleNormalUnknownVar",
    "decide",
    "model_from_dict",
    "replay",
    "step",
    "__version__",
]
