"""Pure numpy/scipy implementations of the hot kernels.

Reference semantics for the numba backend: both backends must produce the
same results (up to floating-point rounding) for identical inputs.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import lfilter


def biquad_apply(x, coeffs, state):
    """Run a biquad cascade over ``x`` [C, T], carrying ``state`` [S, C, 2].

    Direct form II transposed per section; ``state`` is updated in place so
    consecutive calls continue the stream exactly.
    """
    y = np.asarray(x, dtype=np.float64)
    for s in range(coeffs.shape[0]):
        b0, b1, b2, a1, a2 = coeffs[s]
        y, zf = lfilter([b0, b1, b2], [1.0, a1, a2], y, axis=-1, zi=state[s])
        state[s, :, :] = zf
    return y.astype(x.dtype, copy=False)


def depthwise_forward(x, w, b):
    """Per-channel 1D convolution, stride 1, same padding (odd kernel)."""
    k = w.shape[1]
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    win = sliding_window_view(xp, k, axis=2)
    y = np.einsum("bclk,ck->bcl", win, w, optimize=True)
    y += b[:, None]
    return y


def depthwise_backward(x, w, dy):
    """Gradients of depthwise_forward w.r.t. input, weights, and bias."""
    k = w.shape[1]
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    win = sliding_window_view(xp, k, axis=2)
    dw = np.einsum("bclk,bcl->ck", win, dy, optimize=True)
    db = dy.sum(axis=(0, 2))
    dyp = np.pad(dy, ((0, 0), (0, 0), (pad, pad)))
    dwin = sliding_window_view(dyp, k, axis=2)
    dx = np.einsum("bclk,ck->bcl", dwin, w[:, ::-1], optimize=True)
    return dx, dw, db


def maxpool2_relu_forward(x):
    """Fused max-pool (kernel 2, stride 2, floor) + ReLU: max(a, b, 0).

    The returned code packs the argmax offset in bit 0 (ties keep the first
    element) and "the max was positive" in bit 1.
    """
    lo = x.shape[2] // 2
    first = x[:, :, 0:2 * lo:2]
    second = x[:, :, 1:2 * lo:2]
    y = np.maximum(first, second)
    code = (second > first).astype(np.uint8)
    code += (y > 0).view(np.uint8) << 1
    np.maximum(y, 0, out=y)
    return y, code


def maxpool2_relu_backward(dy, code, l_in):
    """Route gradients to the argmax positions of positive maxima."""
    b, c, lo = dy.shape
    dxp = np.zeros((b, c, lo, 2), dtype=dy.dtype)
    contrib = np.where(code >= 2, dy, 0)
    np.put_along_axis(dxp, (code & 1)[..., None].astype(np.intp),
                      contrib[..., None], axis=3)
    dx = np.zeros((b, c, l_in), dtype=dy.dtype)
    dx[:, :, : 2 * lo] = dxp.reshape(b, c, 2 * lo)
    return dx


def bn_affine(z, mu, invstd, gamma, beta):
    """Normalize z in place (becomes xhat) and return gamma * xhat + beta."""
    z -= mu[:, None]
    z *= invstd[:, None]
    y = gamma[:, None] * z
    y += beta[:, None]
    return y


def bn_input_grad(dy, xhat, scale, bias_term, xhat_term):
    """In place on dy: dz = scale * dy - bias_term - xhat_term * xhat.

    The per-channel factors fold gamma, invstd, and the two batch-mean
    corrections of the training-mode batch-norm backward.
    """
    dy *= scale[:, None]
    dy -= bias_term[:, None]
    dy -= xhat_term[:, None] * xhat
    return dy
