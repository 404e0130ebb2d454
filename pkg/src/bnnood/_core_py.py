"""Pure-numpy kernels for network log-likelihoods and their gradients.

Signatures mirror the compiled ``_core`` extension exactly: parameters are a
flat float64 vector, the gradient is written into ``grad_out`` and the
log-likelihood is returned.
"""

import numpy as np
from scipy import special

ACT_RELU, ACT_TANH, ACT_ERF, ACT_COS, ACT_LINEAR = 0, 1, 2, 3, 4
LIK_GAUSSIAN, LIK_LOGISTIC = 0, 1

_TWO_OVER_SQRT_PI = 2.0 / np.sqrt(np.pi)


def _act(code, f):
    if code == ACT_RELU:
        return np.maximum(f, 0.0)
    if code == ACT_TANH:
        return np.tanh(f)
    if code == ACT_ERF:
        return special.erf(f)
    if code == ACT_COS:
        return np.cos(f)
    return f


def _dact(code, f, h):
    if code == ACT_RELU:
        return (f > 0.0).astype(np.float64)
    if code == ACT_TANH:
        return 1.0 - h * h
    if code == ACT_ERF:
        return _TWO_OVER_SQRT_PI * np.exp(-f * f)
    if code == ACT_COS:
        return -np.sin(f)
    return np.ones_like(f)


def _lik(out, y, lik, noise_var, sign):
    if lik == LIK_GAUSSIAN:
        r = y - out
        ll = -0.5 * np.sum(r * r) / noise_var - 0.5 * y.size * np.log(2.0 * np.pi * noise_var)
        return ll, r / noise_var
    z = sign * y * out
    ll = -np.sum(np.logaddexp(0.0, -z))
    return ll, special.expit(-z) * sign * y


def mlp_forward(theta, widths, act, X):
    h = X
    off = 0
    n_layers = len(widths) - 1
    for l in range(n_layers):
        fan_in, fan_out = widths[l], widths[l + 1]
        W = theta[off:off + fan_in * fan_out].reshape(fan_out, fan_in)
        off += fan_in * fan_out
        b = theta[off:off + fan_out]
        off += fan_out
        f = h @ W.T + b
        h = _act(act, f) if l < n_layers - 1 else f
    return h[:, 0]


def mlp_loglik_grad(theta, widths, act, X, y, lik, noise_var, sign, grad_out):
    n_layers = len(widths) - 1
    Ws, offs = [], []
    off = 0
    for l in range(n_layers):
        fan_in, fan_out = widths[l], widths[l + 1]
        offs.append(off)
        Ws.append(theta[off:off + fan_in * fan_out].reshape(fan_out, fan_in))
        off += fan_in * fan_out
        offs.append(off)
        off += fan_out
    posts, pres = [X], []
    h = X
    for l in range(n_layers):
        f = h @ Ws[l].T + theta[offs[2 * l + 1]:offs[2 * l + 1] + widths[l + 1]]
        pres.append(f)
        if l < n_layers - 1:
            h = _act(act, f)
            posts.append(h)
    ll, g = _lik(f[:, 0], y, lik, noise_var, sign)
    delta = g[:, None]
    for l in range(n_layers - 1, -1, -1):
        fan_in, fan_out = widths[l], widths[l + 1]
        ow, ob = offs[2 * l], offs[2 * l + 1]
        grad_out[ow:ow + fan_in * fan_out] = (delta.T @ posts[l]).ravel()
        grad_out[ob:ob + fan_out] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ Ws[l]) * _dact(act, pres[l - 1], posts[l])
    return ll


def _rbf_unpack(theta, H, d):
    mu = theta[:H * d].reshape(H, d)
    w = theta[H * d:H * d + H]
    b = theta[H * d + H]
    return mu, w, b


def rbfnet_forward(theta, H, sigma_g2, X):
    mu, w, b = _rbf_unpack(theta, H, X.shape[1])
    sq = np.sum(X ** 2, 1)[:, None] + np.sum(mu ** 2, 1)[None, :] - 2.0 * X @ mu.T
    phi = np.exp(-np.maximum(sq, 0.0) / (2.0 * sigma_g2))
    return phi @ w + b


def rbfnet_loglik_grad(theta, H, sigma_g2, X, y, lik, noise_var, sign, grad_out):
    d = X.shape[1]
    mu, w, b = _rbf_unpack(theta, H, d)
    diff = X[:, None, :] - mu[None, :, :]
    phi = np.exp(-np.sum(diff * diff, axis=2) / (2.0 * sigma_g2))
    out = phi @ w + b
    ll, g = _lik(out, y, lik, noise_var, sign)
    gw_phi = g[:, None] * phi
    grad_out[:H * d] = (np.einsum("ij,ijk->jk", gw_phi, diff) * (w[:, None] / sigma_g2)).ravel()
    grad_out[H * d:H * d + H] = gw_phi.sum(axis=0)
    grad_out[H * d + H] = g.sum()
    return ll
