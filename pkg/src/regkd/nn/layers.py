"""Layers with hand-written backward passes.

Each layer keeps its trainable arrays in ``params`` and the matching
gradients in ``grads`` (same keys, same shapes). Non-trainable state such
as batch-norm running statistics lives in ``buffers``. Activations needed
by ``backward`` are cached only by a ``train=True`` forward pass.
"""

import numpy as np

from .. import kernels
from ..errors import DimensionError, StateError


class Layer:
    kind = "layer"

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.buffers = {}

    def reset_parameters(self, rng):
        pass

    def forward(self, x, train, rng):
        raise NotImplementedError

    def backward(self, g):
        raise NotImplementedError

    def _need(self, attr):
        value = getattr(self, attr, None)
        if value is None:
            raise StateError(f"{type(self).__name__}.backward called without a cached train-mode forward")
        return value


class Dense(Layer):
    """Affine map ``x @ weight + bias`` with weight shaped (in, out).

    ``needs_input_grad=False`` lets the first layer of a network skip the
    gradient with respect to the raw input.
    """

    kind = "dense"

    def __init__(self, n_in, n_out):
        super().__init__()
        self.n_in = n_in
        self.n_out = n_out
        self.needs_input_grad = True
        self.params = {"weight": np.zeros((n_in, n_out)), "bias": np.zeros(n_out)}
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._x = None

    def reset_parameters(self, rng):
        # fan-in scaled uniform, U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights
        # and bias alike; the wider He bound trains noticeably worse here
        bound = 1.0 / np.sqrt(self.n_in)
        self.params["weight"][...] = rng.uniform(-bound, bound, size=(self.n_in, self.n_out))
        self.params["bias"][...] = rng.uniform(-bound, bound, size=self.n_out)

    def forward(self, x, train, rng):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise DimensionError(f"dense layer expects (batch, {self.n_in}) input, got {x.shape}")
        if train:
            self._x = x
        if self.n_in == 1:
            # broadcasting beats a k=1 GEMM
            return x * self.params["weight"][0] + self.params["bias"]
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, g):
        x = self._need("_x")
        if self.n_in == 1:
            self.grads["weight"][0] = x[:, 0] @ g
        else:
            self.grads["weight"][...] = x.T @ g
        self.grads["bias"][...] = g.sum(axis=0)
        if not self.needs_input_grad:
            return None
        return g @ self.params["weight"].T


class ReLU(Layer):
    kind = "relu"

    def __init__(self):
        super().__init__()
        self._z = None

    def forward(self, x, train, rng):
        if train:
            self._z = x
        return kernels.relu_forward(x)

    def backward(self, g):
        return kernels.relu_backward(g, self._need("_z"))


class BatchNorm(Layer):
    """Per-feature batch normalisation.

    Running variance is updated with the unbiased batch variance.
    """

    kind = "batchnorm"

    def __init__(self, features, momentum=0.1, eps=1e-5):
        super().__init__()
        if not 0.0 < momentum < 1.0:
            raise ValueError("momentum must lie in (0, 1)")
        self.features = features
        self.momentum = momentum
        self.eps = eps
        self.params = {"gamma": np.ones(features), "beta": np.zeros(features)}
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.buffers = {"running_mean": np.zeros(features), "running_var": np.ones(features)}
        self._cache = None

    def reset_parameters(self, rng):
        self.params["gamma"][...] = 1.0
        self.params["beta"][...] = 0.0
        self.buffers["running_mean"][...] = 0.0
        self.buffers["running_var"][...] = 1.0

    def forward(self, x, train, rng):
        gamma, beta = self.params["gamma"], self.params["beta"]
        if not train:
            return kernels.bn_forward_infer(
                x, gamma, beta, self.buffers["running_mean"], self.buffers["running_var"], self.eps
            )
        y, xhat, mean, var, inv_std = kernels.bn_forward_train(x, gamma, beta, self.eps)
        n = x.shape[0]
        unbiased = var * (n / (n - 1)) if n > 1 else var
        m = self.momentum
        rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
        rm[...] = (1.0 - m) * rm + m * mean
        rv[...] = (1.0 - m) * rv + m * unbiased
        self._cache = (xhat, inv_std)
        return y

    def backward(self, g):
        xhat, inv_std = self._need("_cache")
        dx, dgamma, dbeta = kernels.bn_backward(g, xhat, self.params["gamma"], inv_std)
        self.grads["gamma"][...] = dgamma
        self.grads["beta"][...] = dbeta
        return dx


class Dropout(Layer):
    """Inverted dropout: survivors are scaled by 1/(1 - rate) in training."""

    kind = "dropout"

    def __init__(self, rate):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self._keep = None

    def forward(self, x, train, rng):
        if not train or self.rate == 0.0:
            if train:
                self._keep = np.ones(x.shape, dtype=bool)
            return x
        key = int(rng.integers(0, 2**40))
        keep = kernels.dropout_mask(x.shape, key, self.rate)
        self._keep = keep
        return kernels.dropout_apply(x, keep, 1.0 / (1.0 - self.rate))

    def backward(self, g):
        keep = self._need("_keep")
        return kernels.dropout_apply(g, keep, 1.0 / (1.0 - self.rate))
