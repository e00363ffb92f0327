"""Numba-compiled kernels, one-for-one with ``_numpy``.

Loops are written serially: no ``parallel`` and no ``fastmath`` so that
results are reproducible bit for bit from run to run.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def relu_forward(z):
    out = np.empty_like(z)
    n, f = z.shape
    for i in range(n):
        for j in range(f):
            v = z[i, j]
            out[i, j] = v if v > 0.0 else 0.0
    return out


@njit(cache=True)
def relu_backward(g, z):
    out = np.empty_like(g)
    n, f = g.shape
    for i in range(n):
        for j in range(f):
            out[i, j] = g[i, j] if z[i, j] > 0.0 else 0.0
    return out


@njit(cache=True)
def bn_forward_train(x, gamma, beta, eps):
    n, f = x.shape
    mean = np.zeros(f)
    var = np.zeros(f)
    for i in range(n):
        for j in range(f):
            mean[j] += x[i, j]
    for j in range(f):
        mean[j] /= n
    for i in range(n):
        for j in range(f):
            d = x[i, j] - mean[j]
            var[j] += d * d
    inv_std = np.empty(f)
    for j in range(f):
        var[j] /= n
        inv_std[j] = 1.0 / np.sqrt(var[j] + eps)
    xhat = np.empty_like(x)
    y = np.empty_like(x)
    for i in range(n):
        for j in range(f):
            h = (x[i, j] - mean[j]) * inv_std[j]
            xhat[i, j] = h
            y[i, j] = h * gamma[j] + beta[j]
    return y, xhat, mean, var, inv_std


@njit(cache=True)
def bn_forward_infer(x, gamma, beta, running_mean, running_var, eps):
    n, f = x.shape
    y = np.empty_like(x)
    for j in range(f):
        s = np.sqrt(running_var[j] + eps)
        for i in range(n):
            y[i, j] = (x[i, j] - running_mean[j]) / s * gamma[j] + beta[j]
    return y


@njit(cache=True)
def bn_backward(g, xhat, gamma, inv_std):
    n, f = g.shape
    dbeta = np.zeros(f)
    dgamma = np.zeros(f)
    for i in range(n):
        for j in range(f):
            dbeta[j] += g[i, j]
            dgamma[j] += g[i, j] * xhat[i, j]
    dx = np.empty_like(g)
    for i in range(n):
        for j in range(f):
            dx[i, j] = (gamma[j] * inv_std[j] / n) * (
                n * g[i, j] - dbeta[j] - xhat[i, j] * dgamma[j]
            )
    return dx, dgamma, dbeta


@njit(cache=True)
def _splitmix64(z):
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def dropout_mask(shape, key, rate):
    n_rows, n_cols = shape
    n = n_rows * n_cols
    keep = np.empty((n_rows, n_cols), dtype=np.bool_)
    base = np.uint64(key) * np.uint64(n)
    k = 0
    for i in range(n_rows):
        for j in range(n_cols):
            h = _splitmix64(base + np.uint64(k))
            keep[i, j] = np.float64(h >> np.uint64(11)) * 2.0**-53 >= rate
            k += 1
    return keep


@njit(cache=True)
def dropout_apply(x, keep, scale):
    out = np.empty_like(x)
    n, f = x.shape
    for i in range(n):
        for j in range(f):
            out[i, j] = x[i, j] * scale if keep[i, j] else 0.0
    return out


@njit(cache=True)
def adam_update(theta, grad, m, v, lr, beta1, beta2, eps, step):
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    for k in range(theta.size):
        g = grad[k]
        m[k] = beta1 * m[k] + (1.0 - beta1) * g
        v[k] = beta2 * v[k] + (1.0 - beta2) * g * g
        theta[k] -= lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + eps)


@njit(cache=True)
def l1_loss(pred, target):
    n = pred.size
    grad = np.empty(n)
    total = 0.0
    for i in range(n):
        d = pred[i] - target[i]
        if d > 0.0:
            total += d
            grad[i] = 1.0 / n
        elif d < 0.0:
            total -= d
            grad[i] = -1.0 / n
        else:
            grad[i] = 0.0
    return total / n, grad


@njit(cache=True)
def mse_loss(pred, target):
    n = pred.size
    grad = np.empty(n)
    total = 0.0
    for i in range(n):
        d = pred[i] - target[i]
        total += d * d
        grad[i] = 2.0 * d / n
    return total / n, grad


@njit(cache=True)
def tor_loss(rs, rt, t, epsilon, zero_penalty):
    n = rs.size
    grad = np.empty(n)
    inlier = np.empty(n, dtype=np.bool_)
    total = 0.0
    for i in range(n):
        if abs(t[i] - rt[i]) < epsilon:
            inlier[i] = True
            d = rs[i] - t[i]
            total += d * d
            grad[i] = 2.0 * d / n
        else:
            inlier[i] = False
            d = rs[i] - rt[i]
            a = abs(d)
            if zero_penalty or a == 0.0:
                grad[i] = 0.0
            else:
                r = np.sqrt(a)
                total += r
                grad[i] = (1.0 if d > 0.0 else -1.0) / (2.0 * r) / n
    return total / n, grad, inlier


@njit(cache=True)
def tbr_loss(rs, rt, t, margin):
    n = rs.size
    grad = np.empty(n)
    total = 0.0
    for i in range(n):
        ds = rs[i] - t[i]
        dt = rt[i] - t[i]
        if ds * ds + margin > dt * dt:
            total += ds * ds
            grad[i] = 2.0 * ds / n
        else:
            grad[i] = 0.0
    return total / n, grad


@njit(cache=True)
def tukey_loss(pred, target, scale, c):
    n = pred.size
    grad = np.empty(n)
    plateau = c * c / 6.0
    total = 0.0
    for i in range(n):
        u = (pred[i] - target[i]) / scale
        if abs(u) < c:
            r = u / c
            w = 1.0 - r * r
            total += plateau * (1.0 - w * w * w)
            grad[i] = u * w * w / scale / n
        else:
            total += plateau
            grad[i] = 0.0
    return total / n, grad
