# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled network log-likelihood/gradient kernels (see ``_core_py`` for the reference)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, tanh, erf, cos, sin, sqrt, M_PI
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

DEF ACT_RELU = 0
DEF ACT_TANH = 1
DEF ACT_ERF = 2
DEF ACT_COS = 3
DEF LIK_GAUSSIAN = 0

cdef double TWO_OVER_SQRT_PI = 2.0 / sqrt(M_PI)


cdef inline double _act(int code, double f) noexcept nogil:
    if code == ACT_RELU:
        return f if f > 0.0 else 0.0
    if code == ACT_TANH:
        return tanh(f)
    if code == ACT_ERF:
        return erf(f)
    if code == ACT_COS:
        return cos(f)
    return f


cdef inline double _dact(int code, double f, double h) noexcept nogil:
    if code == ACT_RELU:
        return 1.0 if f > 0.0 else 0.0
    if code == ACT_TANH:
        return 1.0 - h * h
    if code == ACT_ERF:
        return TWO_OVER_SQRT_PI * exp(-f * f)
    if code == ACT_COS:
        return -sin(f)
    return 1.0


cdef inline double _softplus(double x) noexcept nogil:
    if x > 0.0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef inline double _sigmoid(double x) noexcept nogil:
    cdef double z
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    z = exp(x)
    return z / (1.0 + z)


cdef double _lik_grad(const double[::1] out, const double[::1] y, int lik,
                      double noise_var, double sign, double[::1] g) noexcept nogil:
    cdef Py_ssize_t i, n = out.shape[0]
    cdef double ll = 0.0, r, z
    if lik == LIK_GAUSSIAN:
        for i in range(n):
            r = y[i] - out[i]
            ll -= 0.5 * r * r / noise_var
            g[i] = r / noise_var
        ll -= 0.5 * n * log(2.0 * M_PI * noise_var)
    else:
        for i in range(n):
            z = sign * y[i] * out[i]
            ll -= _softplus(-z)
            g[i] = _sigmoid(-z) * sign * y[i]
    return ll


cdef inline void _gemm(char ta, char tb, int m, int n, int k, double *a, int lda,
                       double *b, int ldb, double beta, double *c, int ldc) noexcept nogil:
    # column-major C = op(A) op(B) + beta C
    cdef double one = 1.0
    dgemm(&ta, &tb, &m, &n, &k, &one, a, &lda, b, &ldb, &beta, c, &ldc)


def mlp_forward(const double[::1] theta, const cnp.int64_t[::1] widths, int act,
                const double[:, ::1] X):
    cdef Py_ssize_t n = X.shape[0], nl = widths.shape[0] - 1
    cdef Py_ssize_t l, i, j, fi, fo, off = 0, maxw = 0
    for l in range(nl + 1):
        if widths[l] > maxw:
            maxw = widths[l]
    cdef double[::1] a = np.empty(n * maxw)
    cdef double[::1] b = np.empty(n * maxw)
    cdef double[::1] tmp
    cdef double *wp
    if n == 0:
        return np.empty(0)
    with nogil:
        for i in range(n):
            for j in range(widths[0]):
                a[i * widths[0] + j] = X[i, j]
        for l in range(nl):
            fi = widths[l]
            fo = widths[l + 1]
            wp = <double *> &theta[off]
            for i in range(n):
                for j in range(fo):
                    b[i * fo + j] = theta[off + fi * fo + j]
            _gemm(b'T', b'N', fo, n, fi, wp, fi, &a[0], fi, 1.0, &b[0], fo)
            if l < nl - 1:
                for i in range(n * fo):
                    b[i] = _act(act, b[i])
            off += fi * fo + fo
            tmp = a
            a = b
            b = tmp
    return np.asarray(a[:n]).copy()


def mlp_loglik_grad(const double[::1] theta, const cnp.int64_t[::1] widths, int act,
                    const double[:, ::1] X, const double[::1] y, int lik,
                    double noise_var, double sign, double[::1] grad_out):
    cdef Py_ssize_t n = X.shape[0], nl = widths.shape[0] - 1
    cdef Py_ssize_t l, i, j, k, fi, fo, total = 0, maxw = 0
    for l in range(nl + 1):
        total += widths[l]
        if widths[l] > maxw:
            maxw = widths[l]
    cdef cnp.int64_t[::1] poff = np.empty(nl + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] aoff = np.empty(nl + 1, dtype=np.int64)
    cdef double[::1] pre = np.empty(n * total)
    cdef double[::1] post = np.empty(n * total)
    cdef double[::1] delta = np.empty(n * maxw)
    cdef double[::1] delta2 = np.empty(n * maxw)
    cdef double[::1] out = np.empty(n)
    cdef double[::1] g = np.empty(n)
    cdef double[::1] swap
    cdef double s, ll
    cdef double *wp
    cdef Py_ssize_t ow, ob, ai, ao
    with nogil:
        poff[0] = 0
        aoff[0] = 0
        for l in range(nl):
            poff[l + 1] = poff[l] + widths[l] * widths[l + 1] + widths[l + 1]
            aoff[l + 1] = aoff[l] + n * widths[l]
        for i in range(n):
            for k in range(widths[0]):
                post[i * widths[0] + k] = X[i, k]
        for l in range(nl):
            fi = widths[l]
            fo = widths[l + 1]
            ow = poff[l]
            ob = ow + fi * fo
            ai = aoff[l]
            ao = aoff[l + 1]
            wp = <double *> &theta[ow]
            for i in range(n):
                for j in range(fo):
                    pre[ao + i * fo + j] = theta[ob + j]
            _gemm(b'T', b'N', fo, n, fi, wp, fi, &post[ai], fi, 1.0, &pre[ao], fo)
            if l < nl - 1:
                for i in range(n * fo):
                    post[ao + i] = _act(act, pre[ao + i])
            else:
                for i in range(n * fo):
                    post[ao + i] = pre[ao + i]
        ao = aoff[nl]
        for i in range(n):
            out[i] = pre[ao + i]
        ll = _lik_grad(out, y, lik, noise_var, sign, g)
        for i in range(n):
            delta[i] = g[i]
        for l in range(nl - 1, -1, -1):
            fi = widths[l]
            fo = widths[l + 1]
            ow = poff[l]
            ob = ow + fi * fo
            ai = aoff[l]
            wp = <double *> &theta[ow]
            _gemm(b'N', b'T', fi, fo, n, &post[ai], fi, &delta[0], fo, 0.0, &grad_out[ow], fi)
            for j in range(fo):
                grad_out[ob + j] = 0.0
            for i in range(n):
                for j in range(fo):
                    grad_out[ob + j] += delta[i * fo + j]
            if l > 0:
                _gemm(b'N', b'N', fi, n, fo, wp, fi, &delta[0], fo, 0.0, &delta2[0], fi)
                for i in range(n * fi):
                    delta2[i] *= _dact(act, pre[ai + i], post[ai + i])
                swap = delta
                delta = delta2
                delta2 = swap
    return ll


def rbfnet_forward(const double[::1] theta, Py_ssize_t H, double sigma_g2,
                   const double[:, ::1] X):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], i, j, k
    cdef double[::1] out = np.empty(n)
    cdef double s, sq, t
    with nogil:
        for i in range(n):
            s = theta[H * d + H]
            for j in range(H):
                sq = 0.0
                for k in range(d):
                    t = X[i, k] - theta[j * d + k]
                    sq = sq + t * t
                s = s + theta[H * d + j] * exp(-sq / (2.0 * sigma_g2))
            out[i] = s
    return np.asarray(out)


def rbfnet_loglik_grad(const double[::1] theta, Py_ssize_t H, double sigma_g2,
                       const double[:, ::1] X, const double[::1] y, int lik,
                       double noise_var, double sign, double[::1] grad_out):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], i, j, k
    cdef double[:, ::1] phi = np.empty((n, H))
    cdef double[::1] out = np.empty(n)
    cdef double[::1] g = np.empty(n)
    cdef double s, sq, t, ll, c
    with nogil:
        for i in range(n):
            s = theta[H * d + H]
            for j in range(H):
                sq = 0.0
                for k in range(d):
                    t = X[i, k] - theta[j * d + k]
                    sq = sq + t * t
                phi[i, j] = exp(-sq / (2.0 * sigma_g2))
                s = s + theta[H * d + j] * phi[i, j]
            out[i] = s
        ll = _lik_grad(out, y, lik, noise_var, sign, g)
        for k in range(H * d + H + 1):
            grad_out[k] = 0.0
        for i in range(n):
            grad_out[H * d + H] += g[i]
            for j in range(H):
                c = g[i] * phi[i, j]
                grad_out[H * d + j] += c
                c = c * theta[H * d + j] / sigma_g2
                for k in range(d):
                    grad_out[j * d + k] += c * (X[i, k] - theta[j * d + k])
    return ll
