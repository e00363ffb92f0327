"""Pure-numpy reference kernels.

Every function here has a twin with the same signature in ``_numba``.
Inputs are float64 arrays; loss kernels take flat 1-D vectors and
return ``(mean_value, grad)``.
"""

import numpy as np


def relu_forward(z):
    return np.maximum(z, 0.0)


def relu_backward(g, z):
    return np.where(z > 0.0, g, 0.0)


def bn_forward_train(x, gamma, beta, eps):
    mean = x.mean(axis=0)
    centered = x - mean
    var = (centered * centered).mean(axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    return xhat * gamma + beta, xhat, mean, var, inv_std


def bn_forward_infer(x, gamma, beta, running_mean, running_var, eps):
    return (x - running_mean) / np.sqrt(running_var + eps) * gamma + beta


def bn_backward(g, xhat, gamma, inv_std):
    n = g.shape[0]
    dbeta = g.sum(axis=0)
    dgamma = (g * xhat).sum(axis=0)
    dx = (gamma * inv_std / n) * (n * g - dbeta - xhat * dgamma)
    return dx, dgamma, dbeta


_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(z):
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def dropout_mask(shape, key, rate):
    """Keep-mask from a counter-based hash of ``key``; P(keep) = 1 - rate."""
    n = shape[0] * shape[1]
    counters = np.arange(n, dtype=np.uint64) + np.uint64(key) * np.uint64(n)
    u = (_splitmix64(counters) >> np.uint64(11)).astype(np.float64) * 2.0**-53
    return (u >= rate).reshape(shape)


def dropout_apply(x, keep, scale):
    return x * keep * scale


def adam_update(theta, grad, m, v, lr, beta1, beta2, eps, step):
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    theta -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def l1_loss(pred, target):
    d = pred - target
    return np.abs(d).mean(), np.sign(d) / d.size


def mse_loss(pred, target):
    d = pred - target
    return (d * d).mean(), 2.0 * d / d.size


def tor_loss(rs, rt, t, epsilon, zero_penalty):
    n = rs.size
    inlier = np.abs(t - rt) < epsilon
    d_in = rs - t
    d_out = rs - rt
    a = np.abs(d_out)
    if zero_penalty:
        out_val = np.zeros(n)
        out_grad = np.zeros(n)
    else:
        out_val = np.sqrt(a)
        safe = np.where(a > 0.0, a, 1.0)
        out_grad = np.where(a > 0.0, np.sign(d_out) / (2.0 * np.sqrt(safe)), 0.0)
    vals = np.where(inlier, d_in * d_in, out_val)
    grads = np.where(inlier, 2.0 * d_in, out_grad)
    return vals.mean(), grads / n, inlier


def tbr_loss(rs, rt, t, margin):
    n = rs.size
    ds = rs - t
    es = ds * ds
    dt = rt - t
    active = es + margin > dt * dt
    vals = np.where(active, es, 0.0)
    grads = np.where(active, 2.0 * ds, 0.0)
    return vals.mean(), grads / n


def tukey_loss(pred, target, scale, c):
    n = pred.size
    u = (pred - target) / scale
    r = u / c
    inside = np.abs(u) < c
    w = 1.0 - r * r
    plateau = c * c / 6.0
    vals = np.where(inside, plateau * (1.0 - w * w * w), plateau)
    grads = np.where(inside, u * w * w / scale, 0.0)
    return vals.mean(), grads / n
