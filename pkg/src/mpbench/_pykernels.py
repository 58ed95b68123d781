"""Pure numpy implementations of the hot kernels.

Used when the compiled ``_kernels`` extension is missing or when
``MPB_PURE_PYTHON=1`` is set. Signatures and float64 semantics match the
Cython module exactly; results agree to rounding.
"""
import numpy as np

NAME = "python"


def _taps():
    for i in range(3):
        for j in range(3):
            for k in range(3):
                yield i, j, k


def _tap_major(kernel):
    # strided kernel[:, :, i, j, k] views would miss the BLAS fast path
    return np.ascontiguousarray(kernel.transpose(2, 3, 4, 0, 1))


def conv3d_forward(x, kernel, bias):
    # x (Ci,T,H,W), kernel (Co,Ci,3,3,3), bias (Co,)
    ci, t, h, w = x.shape
    co = kernel.shape[0]
    km = _tap_major(kernel)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (1, 1)))
    out = np.empty((co, t * h * w))
    out[:] = bias[:, None]
    for i, j, k in _taps():
        patch = xp[:, i:i + t, j:j + h, k:k + w].reshape(ci, -1)
        out += km[i, j, k] @ patch
    return out.reshape(co, t, h, w)


def conv3d_backward_input(gout, kernel):
    co, t, h, w = gout.shape
    ci = kernel.shape[1]
    km = _tap_major(kernel)
    g2 = gout.reshape(co, -1)
    gxp = np.zeros((ci, t + 2, h + 2, w + 2))
    for i, j, k in _taps():
        gxp[:, i:i + t, j:j + h, k:k + w] += (km[i, j, k].T @ g2).reshape(ci, t, h, w)
    return gxp[:, 1:-1, 1:-1, 1:-1].copy()


def conv3d_backward_kernel(gout, x):
    co, t, h, w = gout.shape
    ci = x.shape[0]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (1, 1)))
    g2 = gout.reshape(co, -1)
    gk = np.empty((3, 3, 3, co, ci))
    for i, j, k in _taps():
        patch = xp[:, i:i + t, j:j + h, k:k + w].reshape(ci, -1)
        gk[i, j, k] = g2 @ patch.T
    return np.ascontiguousarray(gk.transpose(3, 4, 0, 1, 2))


def temporal_sq_diffs(x):
    """Sum of squared differences between consecutive time slices; entry 0 is 0."""
    out = np.zeros(x.shape[0])
    if x.shape[0] > 1:
        d = np.diff(x, axis=0)
        out[1:] = np.einsum("tchw,tchw->t", d, d)
    return out


def gaussian_mask_sum(rows, cols, sigma, height, width):
    u = np.arange(height, dtype=np.float64)[:, None]
    v = np.arange(width, dtype=np.float64)[None, :]
    out = np.zeros((height, width))
    denom = 2.0 * sigma * sigma
    for r, c in zip(rows, cols):
        out += np.exp(-((u - r) ** 2 + (v - c) ** 2) / denom)
    return out
