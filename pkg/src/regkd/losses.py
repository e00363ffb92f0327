"""Training losses.

Every loss reduces by the batch mean and returns a ``LossResult`` whose
``grad`` is the derivative of the mean with respect to the prediction,
shaped like the prediction. Targets and teacher predictions never carry
gradient.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import DegenerateScaleError, DimensionError, StateError

TUKEY_C = 4.685
PENALTIES = ("sqrt-abs", "zero")


class LossResult(NamedTuple):
    value: float
    grad: np.ndarray


def _flat(*arrays):
    shape = np.shape(arrays[0])
    out = []
    for a in arrays:
        if np.shape(a) != shape:
            raise DimensionError(f"shape mismatch: {shape} vs {np.shape(a)}")
        out.append(np.ascontiguousarray(a, dtype=np.float64).ravel())
    return shape, out


def l1_loss(pred, target):
    """Mean absolute error; subgradient 0 where ``pred == target``."""
    shape, (p, t) = _flat(pred, target)
    value, grad = kernels.l1_loss(p, t)
    return LossResult(float(value), grad.reshape(shape))


def mse_loss(pred, target):
    """Mean of ``(pred - target)**2``."""
    shape, (p, t) = _flat(pred, target)
    value, grad = kernels.mse_loss(p, t)
    return LossResult(float(value), grad.reshape(shape))


@dataclass(frozen=True)
class TorLossConfig:
    """Teacher-outlier-rejection settings.

    ``penalty`` picks what outliers contribute: ``"sqrt-abs"`` applies
    ``sqrt(|R_s - R_t|)``, ``"zero"`` drops them entirely.
    """

    epsilon: float | None
    penalty: str = "sqrt-abs"

    def __post_init__(self):
        if self.penalty not in PENALTIES:
            raise ValueError(f"penalty must be one of {PENALTIES}, got {self.penalty!r}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError(f"epsilon_outlier must be positive, got {self.epsilon}")


def tor_inliers(teacher_pred, target, epsilon):
    """Boolean mask of samples the teacher accepts: ``|t - R_t| < epsilon``."""
    return np.abs(np.asarray(target) - np.asarray(teacher_pred)) < epsilon


def tor_loss(student_pred, teacher_pred, target, config):
    """Teacher outlier rejection loss.

    Inliers (``|t - R_t| < epsilon``) contribute ``(R_s - t)**2``; the rest
    contribute the configured penalty on ``R_s - R_t``. Ties go to the
    outlier branch. The branch never depends on ``R_s``.
    """
    if config is None or config.epsilon is None:
        raise StateError("tor_loss needs a threshold; epsilon_outlier is unset")
    shape, (rs, rt, t) = _flat(student_pred, teacher_pred, target)
    value, grad, _ = kernels.tor_loss(rs, rt, t, float(config.epsilon), config.penalty == "zero")
    return LossResult(float(value), grad.reshape(shape))


def tbr_loss(student_pred, teacher_pred, target, margin=0.0):
    """Teacher-bounded regression loss.

    Squared student error, switched off once the student beats the teacher
    by more than ``margin``: active iff ``(R_s - t)**2 + m > (R_t - t)**2``.
    The form follows the bounded regression loss of Chen et al. (2017),
    "Learning Efficient Object Detection Models with Knowledge Distillation".
    """
    if margin < 0:
        raise ValueError("margin must be non-negative")
    shape, (rs, rt, t) = _flat(student_pred, teacher_pred, target)
    value, grad = kernels.tbr_loss(rs, rt, t, float(margin))
    return LossResult(float(value), grad.reshape(shape))


def tukey_robust_loss(pred, target, scale, c=TUKEY_C):
    """Tukey biweight on residuals divided by ``scale``.

    ``rho(u) = c**2/6 * (1 - (1 - (u/c)**2)**3)`` inside ``|u| < c`` and the
    plateau ``c**2/6`` beyond it. ``scale`` is held constant for the
    gradient (typically ``mad_sigma`` of the current residuals).
    """
    if not scale > 0 or not np.isfinite(scale):
        raise DegenerateScaleError(f"robust loss scale must be positive and finite, got {scale}")
    shape, (p, t) = _flat(pred, target)
    value, grad = kernels.tukey_loss(p, t, float(scale), float(c))
    return LossResult(float(value), grad.reshape(shape))


@dataclass(frozen=True)
class CompositeWeights:
    c_tor: float = 1.0
    c_d: float = 1.0

    def __post_init__(self):
        if self.c_tor < 0 or self.c_d < 0:
            raise ValueError("loss weights must be non-negative")
        if self.c_tor == 0 and self.c_d == 0:
            raise ValueError("c_tor and c_d cannot both be zero")


def composite_loss(tor, l_d, weights):
    """``c_tor * L_TOR + c_D * L_D``.

    With plain numbers returns the weighted sum. With ``LossResult`` inputs
    (one per head) returns a ``LossResult`` whose gradient has one column
    per head: ``[c_tor * grad_tor, c_d * grad_d]``.
    """
    if isinstance(tor, LossResult) and isinstance(l_d, LossResult):
        value = weights.c_tor * tor.value + weights.c_d * l_d.value
        grad = np.column_stack(
            [weights.c_tor * np.ravel(tor.grad), weights.c_d * np.ravel(l_d.grad)]
        )
        return LossResult(value, grad)
    return weights.c_tor * float(tor) + weights.c_d * float(l_d)
