"""Pure numpy convolution kernels.

Forward builds a zero-copy im2col view with stride tricks and reduces it with
``np.tensordot`` (BLAS). The backward passes loop over the k*k kernel taps;
because stride is fixed at 1, each tap touches one contiguous slice, so both
directions stay fully vectorized.
"""

import numpy as np

__all__ = ["conv2d_forward", "conv2d_backward_input", "conv2d_backward_weight"]


def _padded(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d_forward(x, w, dilation, padding):
    n, ci, h, wd = x.shape
    co, _, k, _ = w.shape
    oh = h + 2 * padding - dilation * (k - 1)
    ow = wd + 2 * padding - dilation * (k - 1)
    xp = _padded(x, padding)
    sn, sc, sh, sw = xp.strides
    cols = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, ci, k, k, oh, ow),
        strides=(sn, sc, sh * dilation, sw * dilation, sh, sw),
        writeable=False,
    )
    y = np.tensordot(w, cols, axes=([1, 2, 3], [1, 2, 3]))  # (co, n, oh, ow)
    return np.ascontiguousarray(y.transpose(1, 0, 2, 3))


def conv2d_backward_input(dy, w, in_h, in_w, dilation, padding):
    n, _, oh, ow = dy.shape
    _, ci, k, _ = w.shape
    dxp = np.zeros((n, ci, in_h + 2 * padding, in_w + 2 * padding), dtype=dy.dtype)
    for i in range(k):
        for j in range(k):
            # (ci, n, oh, ow) contribution of tap (i, j)
            t = np.tensordot(w[:, :, i, j], dy, axes=([0], [1]))
            dxp[:, :, i * dilation:i * dilation + oh,
                j * dilation:j * dilation + ow] += t.transpose(1, 0, 2, 3)
    if padding:
        dxp = dxp[:, :, padding:-padding, padding:-padding]
    return np.ascontiguousarray(dxp)


def conv2d_backward_weight(dy, x, k, dilation, padding):
    _, co, oh, ow = dy.shape
    _, ci, _, _ = x.shape
    xp = _padded(x, padding)
    dw = np.empty((co, ci, k, k), dtype=dy.dtype)
    for i in range(k):
        for j in range(k):
            xs = xp[:, :, i * dilation:i * dilation + oh,
                    j * dilation:j * dilation + ow]
            dw[:, :, i, j] = np.tensordot(dy, xs, axes=([0, 2, 3], [0, 2, 3]))
    return dw
