from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from ..errors import DimensionError


class Adam:
    """Adam with bias correction, updating a flat parameter vector in place.

    Moment buffers are allocated on the first ``step`` to match ``params``.
    """

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = None
        self.v = None

    def step(self, params, grads, lr=None):
        if params.shape != grads.shape:
            raise DimensionError(f"params {params.shape} and grads {grads.shape} differ")
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        elif self.m.shape != params.shape:
            raise DimensionError("parameter vector changed shape between steps")
        self.step_count += 1
        kernels.adam_update(
            params,
            grads,
            self.m,
            self.v,
            float(self.lr if lr is None else lr),
            self.beta1,
            self.beta2,
            self.eps,
            float(self.step_count),
        )
        return params


@dataclass(frozen=True)
class LrSchedule:
    """Piecewise-constant rate: ``base * factor**k`` after k drop epochs."""

    base: float
    drops: tuple = field(default_factory=tuple)
    factor: float = 0.1

    def __post_init__(self):
        if self.base <= 0:
            raise ValueError("base learning rate must be positive")
        if not 0.0 < self.factor < 1.0:
            raise ValueError("drop factor must lie in (0, 1)")
        object.__setattr__(self, "drops", tuple(sorted(int(e) for e in self.drops)))

    def lr_at(self, epoch):
        if epoch < 0:
            raise ValueError("epoch must be non-negative")
        k = sum(1 for e in self.drops if e <= epoch)
        return self.base * self.factor**k
