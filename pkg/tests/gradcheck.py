"""Central finite-difference helpers shared by the gradient tests."""

import numpy as np

STEP = 1e-5


def numeric_grad(f, x, step=STEP, index=None):
    """Central differences of scalar ``f`` w.r.t. array ``x`` (modified in place, then restored)."""
    flat = x.reshape(-1)
    idx = range(flat.size) if index is None else index
    out = np.zeros(flat.size)
    for i in idx:
        old = flat[i]
        flat[i] = old + step
        hi = f()
        flat[i] = old - step
        lo = f()
        flat[i] = old
        out[i] = (hi - lo) / (2 * step)
    return out.reshape(x.shape)


def rel_error(analytic, numeric, floor=1e-7):
    """Largest elementwise relative error, with an absolute floor for near-zero entries."""
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
