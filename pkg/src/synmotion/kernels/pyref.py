"""Pure-numpy kernels. The compiled twin in fastcore.pyx implements the same
contracts; tests assert the two backends agree to ~1e-10.

Convolutions are phrased as one contiguous 2D matmul per kernel tap so the
work lands in BLAS."""

import numpy as np


def _padded(x, pad):
    if not pad:
        return x
    B, T, Cin = x.shape
    xp = np.zeros((B, T + 2 * pad, Cin))
    xp[:, pad:pad + T] = x
    return xp


def conv1d_forward(x, w, b, stride, pad):
    """1D convolution over the time axis.

    x: (B, T, Cin), w: (Cout, Cin, K), b: (Cout,). Returns (B, To, Cout)
    with To = (T + 2*pad - K) // stride + 1. Zero padding.
    """
    B, T, Cin = x.shape
    Cout, _, K = w.shape
    To = (T + 2 * pad - K) // stride + 1
    xp = _padded(x, pad)
    Tp = xp.shape[1]
    y = np.empty((B, To, Cout))
    y[:] = b
    flat = xp.reshape(-1, Cin)
    for dt in range(K):
        full = (flat @ w[:, :, dt].T).reshape(B, Tp, Cout)
        y += full[:, dt:dt + stride * (To - 1) + 1:stride]
    return y


def conv1d_backward(x, w, gy, stride, pad):
    """Gradients of conv1d_forward. Returns (gx, gw, gb)."""
    B, T, Cin = x.shape
    Cout, _, K = w.shape
    To = gy.shape[1]
    xp = _padded(x, pad)
    Tp = xp.shape[1]
    gw = np.empty_like(w)
    gxp = np.zeros((B, Tp, Cin))
    gyf = gy.reshape(-1, Cout)
    for dt in range(K):
        sl = slice(dt, dt + stride * (To - 1) + 1, stride)
        xs = np.ascontiguousarray(xp[:, sl]).reshape(-1, Cin)
        gw[:, :, dt] = gyf.T @ xs
        gxp[:, sl] += (gyf @ w[:, :, dt]).reshape(B, To, Cin)
    gb = gyf.sum(axis=0)
    gx = gxp[:, pad:pad + T] if pad else gxp
    return gx, gw, gb


def nearest_code(x, cb):
    """Index of the nearest codebook entry per row (squared Euclidean).

    Ties break to the lowest index. x: (n, d), cb: (K, d) -> (n,) int64.
    """
    d2 = ((x[:, None, :] - cb[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1).astype(np.int64)
