"""Knowledge distillation for regression with teacher outlier rejection.

A small numpy network engine (with numba-compiled kernels), robust scale
and threshold estimation, the distillation losses, teacher and student
builders, a synthetic sinusoid benchmark and a reproducible trial harness.
"""

from .errors import (
    ConfigError,
    DegenerateScaleError,
    DimensionError,
    DivergenceError,
    DomainError,
    StateError,
    TabularParseError,
)
from .kernels import BACKEND
from .variants import TAGS, MethodVariant

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConfigError",
    "DegenerateScaleError",
    "DimensionError",
    "DivergenceError",
    "DomainError",
    "MethodVariant",
    "StateError",
    "TAGS",
    "TabularParseError",
]
