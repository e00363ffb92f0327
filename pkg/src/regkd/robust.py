"""Robust scale estimation and the tail-region outlier threshold.

Under a Gaussian residual model with scale ``sigma``, a residual of size
``eps`` is expected to occur ``B * N(eps | 0, sigma)`` times per batch of
``B`` samples. Residuals whose expected count falls below ``alpha`` are
treated as outliers; ``epsilon_outlier`` solves for the boundary in closed
form and ``expected_tail_count`` is its inverse.

Only the Gaussian tail model is implemented. Another residual density can
be supported by providing its own ``expected_tail_count`` and inverting it.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateScaleError, DomainError

MAD_TO_SIGMA = 1.4826
SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class ResidualSet:
    """Residuals ``t - R_t`` plus a free-form tag saying where they came from."""

    values: np.ndarray
    source: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel()
        if v.size == 0:
            raise ValueError("residual set is empty")
        if not np.all(np.isfinite(v)):
            raise ValueError("residual set contains non-finite values")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class OutlierThreshold:
    sigma: float
    alpha: float
    batch_size: int
    epsilon: float

    @classmethod
    def from_scale(cls, sigma, alpha, batch_size):
        return cls(float(sigma), float(alpha), int(batch_size), epsilon_outlier(sigma, alpha, batch_size))

    def as_dict(self):
        return {
            "sigma_hat": self.sigma,
            "alpha": self.alpha,
            "batch_size": self.batch_size,
            "epsilon_outlier": self.epsilon,
        }


def median(values):
    """Median; even lengths average the two central order statistics."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("median of an empty vector")
    return float(np.median(v))


def mad(values):
    """Median absolute deviation, ``median(|v - median(v)|)``."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("MAD of an empty vector")
    return float(np.median(np.abs(v - np.median(v))))


def mad_sigma(residuals):
    """Gaussian-consistent scale estimate ``1.4826 * MAD``.

    Raises
    ------
    DegenerateScaleError
        If the MAD is zero, e.g. when all residuals are equal.
    """
    if isinstance(residuals, ResidualSet):
        residuals = residuals.values
    v = np.asarray(residuals, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("residual set is empty")
    if not np.all(np.isfinite(v)):
        raise ValueError("residual set contains non-finite values")
    m = mad(v)
    if m == 0.0:
        raise DegenerateScaleError("MAD of residuals is zero; scale is degenerate")
    return MAD_TO_SIGMA * m


def epsilon_outlier(sigma, alpha, batch_size):
    """Residual magnitude where the expected per-batch count equals ``alpha``.

    ``sigma * sqrt(-2 ln(sqrt(2 pi) sigma alpha / B))``. The log argument
    must lie strictly inside (0, 1).
    """
    if sigma <= 0 or alpha <= 0 or batch_size <= 0:
        raise DomainError(
            f"sigma, alpha and batch_size must be positive (got {sigma}, {alpha}, {batch_size})"
        )
    ratio = SQRT_2PI * sigma * alpha / batch_size
    if not 0.0 < ratio < 1.0:
        raise DomainError(
            f"sqrt(2*pi)*sigma*alpha/B = {ratio:.6g} is outside (0, 1); threshold undefined"
        )
    return sigma * math.sqrt(-2.0 * math.log(ratio))


def expected_tail_count(epsilon, sigma, batch_size):
    """Expected number of samples per batch at residual ``epsilon``."""
    if sigma <= 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    return batch_size * math.exp(-(epsilon * epsilon) / (2.0 * sigma * sigma)) / (sigma * SQRT_2PI)
