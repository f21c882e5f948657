"""Numba-jitted hot kernels.

Same contracts as numpy_backend; see there for the reference semantics.
Kernels parallelize only over axes with disjoint writes, so results are
deterministic for a fixed input regardless of thread count.
"""
import numpy as np
from numba import njit, prange

_jit = {"parallel": True, "fastmath": True, "cache": True}


@njit(cache=True)
def _biquad_kernel(x, coeffs, state, out):
    ns = coeffs.shape[0]
    nc, nt = x.shape
    for c in range(nc):
        for t in range(nt):
            v = x[c, t]
            for s in range(ns):
                b0 = coeffs[s, 0]
                b1 = coeffs[s, 1]
                b2 = coeffs[s, 2]
                a1 = coeffs[s, 3]
                a2 = coeffs[s, 4]
                y = b0 * v + state[s, c, 0]
                state[s, c, 0] = b1 * v + state[s, c, 1] - a1 * y
                state[s, c, 1] = b2 * v - a2 * y
                v = y
            out[c, t] = v


def biquad_apply(x, coeffs, state):
    xf = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(xf)
    _biquad_kernel(xf, coeffs, state, out)
    return out.astype(x.dtype, copy=False)


@njit(**_jit)
def _depthwise_fwd_kernel(x, w, b, out):
    # bounds-checked borders, branch-free interior; the 15-tap default gets
    # a fully unrolled stencil, which the compiler vectorizes much better
    # than the runtime-length reduction
    nb, nc, nl = x.shape
    k = w.shape[1]
    pad = (k - 1) // 2
    for i in prange(nb):
        for c in range(nc):
            for l in range(min(pad, nl)):
                acc = b[c]
                for j in range(k):
                    t = l - pad + j
                    if 0 <= t < nl:
                        acc += x[i, c, t] * w[c, j]
                out[i, c, l] = acc
            if k == 15:
                w0 = w[c, 0]; w1 = w[c, 1]; w2 = w[c, 2]; w3 = w[c, 3]
                w4 = w[c, 4]; w5 = w[c, 5]; w6 = w[c, 6]; w7 = w[c, 7]
                w8 = w[c, 8]; w9 = w[c, 9]; w10 = w[c, 10]; w11 = w[c, 11]
                w12 = w[c, 12]; w13 = w[c, 13]; w14 = w[c, 14]
                for l in range(pad, nl - pad):
                    t = l - pad
                    out[i, c, l] = (
                        b[c]
                        + w0 * x[i, c, t] + w1 * x[i, c, t + 1]
                        + w2 * x[i, c, t + 2] + w3 * x[i, c, t + 3]
                        + w4 * x[i, c, t + 4] + w5 * x[i, c, t + 5]
                        + w6 * x[i, c, t + 6] + w7 * x[i, c, t + 7]
                        + w8 * x[i, c, t + 8] + w9 * x[i, c, t + 9]
                        + w10 * x[i, c, t + 10] + w11 * x[i, c, t + 11]
                        + w12 * x[i, c, t + 12] + w13 * x[i, c, t + 13]
                        + w14 * x[i, c, t + 14])
            else:
                for l in range(pad, nl - pad):
                    acc = b[c]
                    base = l - pad
                    for j in range(k):
                        acc += x[i, c, base + j] * w[c, j]
                    out[i, c, l] = acc
            for l in range(max(nl - pad, pad), nl):
                acc = b[c]
                for j in range(k):
                    t = l - pad + j
                    if 0 <= t < nl:
                        acc += x[i, c, t] * w[c, j]
                out[i, c, l] = acc


def depthwise_forward(x, w, b):
    out = np.empty_like(x)
    _depthwise_fwd_kernel(x, w, b, out)
    return out


@njit(**_jit)
def _depthwise_bwd_dx_kernel(dy, wf, dx):
    # same stencil structure as the forward; wf is the pre-flipped kernel
    nb, nc, nl = dy.shape
    k = wf.shape[1]
    pad = (k - 1) // 2
    zero = dy[0, 0, 0] * wf[0, 0] * 0
    for i in prange(nb):
        for c in range(nc):
            for l in range(min(pad, nl)):
                acc = zero
                for j in range(k):
                    t = l - pad + j
                    if 0 <= t < nl:
                        acc += dy[i, c, t] * wf[c, j]
                dx[i, c, l] = acc
            if k == 15:
                w0 = wf[c, 0]; w1 = wf[c, 1]; w2 = wf[c, 2]; w3 = wf[c, 3]
                w4 = wf[c, 4]; w5 = wf[c, 5]; w6 = wf[c, 6]; w7 = wf[c, 7]
                w8 = wf[c, 8]; w9 = wf[c, 9]; w10 = wf[c, 10]; w11 = wf[c, 11]
                w12 = wf[c, 12]; w13 = wf[c, 13]; w14 = wf[c, 14]
                for l in range(pad, nl - pad):
                    t = l - pad
                    dx[i, c, l] = (
                        w0 * dy[i, c, t] + w1 * dy[i, c, t + 1]
                        + w2 * dy[i, c, t + 2] + w3 * dy[i, c, t + 3]
                        + w4 * dy[i, c, t + 4] + w5 * dy[i, c, t + 5]
                        + w6 * dy[i, c, t + 6] + w7 * dy[i, c, t + 7]
                        + w8 * dy[i, c, t + 8] + w9 * dy[i, c, t + 9]
                        + w10 * dy[i, c, t + 10] + w11 * dy[i, c, t + 11]
                        + w12 * dy[i, c, t + 12] + w13 * dy[i, c, t + 13]
                        + w14 * dy[i, c, t + 14])
            else:
                for l in range(pad, nl - pad):
                    acc = zero
                    base = l - pad
                    for j in range(k):
                        acc += dy[i, c, base + j] * wf[c, j]
                    dx[i, c, l] = acc
            for l in range(max(nl - pad, pad), nl):
                acc = zero
                for j in range(k):
                    t = l - pad + j
                    if 0 <= t < nl:
                        acc += dy[i, c, t] * wf[c, j]
                dx[i, c, l] = acc


@njit(**_jit)
def _depthwise_bwd_dw_kernel(x, dy, dw, db):
    # per-tap row dots go through BLAS; the (x, dy) row pair stays L1-hot
    nb, nc, nl = x.shape
    k = dw.shape[1]
    pad = (k - 1) // 2
    zero = x[0, 0, 0] * dy[0, 0, 0] * 0
    for c in prange(nc):
        for j in range(k):
            dw[c, j] = zero
        sb = zero
        for i in range(nb):
            for j in range(k):
                s = j - pad
                l0 = -s if s < 0 else 0
                l1 = nl - s if s > 0 else nl
                dw[c, j] += np.dot(x[i, c, l0 + s:l1 + s], dy[i, c, l0:l1])
            sb += np.sum(dy[i, c])
        db[c] = sb


def depthwise_backward(x, w, dy):
    dx = np.empty_like(x)
    dw = np.empty_like(w)
    db = np.empty_like(w[:, 0])
    _depthwise_bwd_dx_kernel(dy, np.ascontiguousarray(w[:, ::-1]), dx)
    _depthwise_bwd_dw_kernel(x, dy, dw, db)
    return dx, dw, db


@njit(**_jit)
def _maxpool2_relu_fwd_kernel(x, y, code):
    nb, nc, lo = y.shape
    for i in prange(nb):
        for c in range(nc):
            for l in range(lo):
                a = x[i, c, 2 * l]
                b = x[i, c, 2 * l + 1]
                if b > a:
                    m = b
                    k = 1
                else:
                    m = a
                    k = 0
                if m > 0:
                    y[i, c, l] = m
                    code[i, c, l] = k + 2
                else:
                    y[i, c, l] = 0
                    code[i, c, l] = k


def maxpool2_relu_forward(x):
    nb, nc, nl = x.shape
    lo = nl // 2
    y = np.empty((nb, nc, lo), dtype=x.dtype)
    code = np.empty((nb, nc, lo), dtype=np.uint8)
    _maxpool2_relu_fwd_kernel(x, y, code)
    return y, code


@njit(**_jit)
def _maxpool2_relu_bwd_kernel(dy, code, dx):
    # sequential zero-fill then scatter: cheaper than faulting a calloc'd
    # buffer through random writes
    nb, nc, lo = dy.shape
    l_in = dx.shape[2]
    for i in prange(nb):
        for c in range(nc):
            for l in range(l_in):
                dx[i, c, l] = 0.0
            for l in range(lo):
                k = code[i, c, l]
                if k >= 2:
                    dx[i, c, 2 * l + (k - 2)] = dy[i, c, l]


def maxpool2_relu_backward(dy, code, l_in):
    nb, nc, _ = dy.shape
    dx = np.empty((nb, nc, l_in), dtype=dy.dtype)
    _maxpool2_relu_bwd_kernel(dy, code, dx)
    return dx


@njit(**_jit)
def _bn_affine_kernel(z, mu, invstd, gamma, beta, y):
    nb, nc, nl = z.shape
    for i in prange(nb):
        for c in range(nc):
            m = mu[c]
            s = invstd[c]
            g = gamma[c]
            b = beta[c]
            for l in range(nl):
                xh = (z[i, c, l] - m) * s
                z[i, c, l] = xh
                y[i, c, l] = g * xh + b


def bn_affine(z, mu, invstd, gamma, beta):
    y = np.empty_like(z)
    dt = z.dtype
    _bn_affine_kernel(z, np.asarray(mu, dt), np.asarray(invstd, dt),
                      np.asarray(gamma, dt), np.asarray(beta, dt), y)
    return y


@njit(**_jit)
def _bn_input_grad_kernel(dy, xhat, scale, bias_term, xhat_term):
    nb, nc, nl = dy.shape
    for i in prange(nb):
        for c in range(nc):
            a = scale[c]
            b = bias_term[c]
            t = xhat_term[c]
            for l in range(nl):
                dy[i, c, l] = a * dy[i, c, l] - b - t * xhat[i, c, l]


def bn_input_grad(dy, xhat, scale, bias_term, xhat_term):
    dt = dy.dtype
    _bn_input_grad_kernel(dy, xhat, np.asarray(scale, dt),
                          np.asarray(bias_term, dt), np.asarray(xhat_term, dt))
    return dy
