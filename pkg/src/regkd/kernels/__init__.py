"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is chosen once, at import time, from the ``REGKD_BACKEND``
environment variable:

* ``numba`` (default) -- JIT-compiled loops; silently falls back to numpy
  when numba cannot be imported.
* ``numpy`` -- vectorised reference implementation.

Both backends expose the same functions. ``backend_module(name)`` returns
either one explicitly, which is what the equivalence tests and the
benchmark use.
"""

import importlib
import os

from . import _numpy

__all__ = [
    "BACKEND",
    "backend_module",
    "relu_forward",
    "relu_backward",
    "bn_forward_train",
    "bn_forward_infer",
    "bn_backward",
    "dropout_mask",
    "dropout_apply",
    "adam_update",
    "l1_loss",
    "mse_loss",
    "tor_loss",
    "tbr_loss",
    "tukey_loss",
]


def backend_module(name):
    if name == "numpy":
        return _numpy
    if name == "numba":
        return importlib.import_module(f"{__name__}._numba")
    raise ValueError(f"unknown kernel backend {name!r}; expected 'numba' or 'numpy'")


def _select():
    requested = os.environ.get("REGKD_BACKEND", "numba").strip().lower()
    if requested == "numba":
        try:
            return "numba", backend_module("numba")
        except ImportError:
            return "numpy", _numpy
    return requested, backend_module(requested)


BACKEND, _impl = _select()

relu_forward = _impl.relu_forward
relu_backward = _impl.relu_backward
bn_forward_train = _impl.bn_forward_train
bn_forward_infer = _impl.bn_forward_infer
bn_backward = _impl.bn_backward
dropout_mask = _impl.dropout_mask
dropout_apply = _impl.dropout_apply
adam_update = _impl.adam_update
l1_loss = _impl.l1_loss
mse_loss = _impl.mse_loss
tor_loss = _impl.tor_loss
tbr_loss = _impl.tbr_loss
tukey_loss = _impl.tukey_loss
