"""Differentiable operations on 4-D tensors.

Everything the glance networks need: dilated convolution, batch
normalization, ReLU, 2x2 average pooling, bilinear resizing, channel
concatenation/slicing, softmax cross-entropy and a scalar sum. Each op
validates its contract, runs the forward in numpy (convolution through the
selected kernel backend), and records a backward rule on the active tape.

Stride is fixed at 1 and kernel sizes are 1 or 3, matching the
architectures built on top.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .autograd import GradTape, Tensor, active_tape

__all__ = [
    "conv2d", "batchnorm2d", "relu", "avgpool2x2", "bilinear_resize",
    "concat_channels", "slice_channels", "softmax_cross_entropy", "tensor_sum",
]


def _record(output: Tensor, inputs, backward_fn) -> Tensor:
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        output.requires_grad = True
        tape.record(output, inputs, backward_fn)
    return output


def _require_finite(t: Tensor, what: str) -> None:
    if not t.is_finite():
        raise ValueError(f"{what} contains NaN or Inf")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           dilation: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution, stride 1, square kernel of size 1 or 3.

    Output spatial size is ``in + 2*padding - dilation*(k-1)``; the callers
    use padding == dilation for 3x3 kernels to preserve it.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError("conv2d expects 4-D input and weight")
    n, ci, h, w = x.shape
    co, wci, k, k2 = weight.shape
    if k != k2 or k not in (1, 3):
        raise ValueError(f"kernel must be square of size 1 or 3, got {k}x{k2}")
    if wci != ci:
        raise ValueError(f"channel mismatch: input has {ci}, weight expects {wci}")
    if dilation < 1:
        raise ValueError("dilation must be a positive integer")
    if padding < 0:
        raise ValueError("padding must be non-negative")
    oh = h + 2 * padding - dilation * (k - 1)
    ow = w + 2 * padding - dilation * (k - 1)
    if oh <= 0 or ow <= 0:
        raise ValueError(f"output size {oh}x{ow} not positive for input {h}x{w}")
    if bias is not None and bias.shape != (co,):
        raise ValueError(f"bias shape {bias.shape} != ({co},)")
    _require_finite(x, "conv2d input")
    _require_finite(weight, "conv2d weight")

    backend = kernels.active_backend()
    ct = np.result_type(x.dtype, weight.dtype)
    xd = np.ascontiguousarray(x.data, dtype=ct)
    wd = np.ascontiguousarray(weight.data, dtype=ct)
    y = backend.conv2d_forward(xd, wd, dilation, padding)
    if bias is not None:
        y += bias.data.astype(ct, copy=False)[None, :, None, None]
    out = Tensor(y)

    if bias is None:
        inputs = (x, weight)
    else:
        inputs = (x, weight, bias)

    def backward(dy):
        dy = np.ascontiguousarray(dy, dtype=ct)
        dx = backend.conv2d_backward_input(dy, wd, h, w, dilation, padding)
        dweight = backend.conv2d_backward_weight(dy, xd, k, dilation, padding)
        if bias is None:
            return dx, dweight
        return dx, dweight, dy.sum(axis=(0, 2, 3))

    return _record(out, inputs, backward)


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                running_mean: np.ndarray, running_var: np.ndarray,
                training: bool, momentum: float = 0.1,
                eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization.

    Training mode normalizes with batch statistics over (n, h, w) and updates
    the running buffers in place as ``running = (1-momentum)*running +
    momentum*batch``; eval mode normalizes with the running buffers.
    """
    if x.ndim != 4:
        raise ValueError("batchnorm2d expects a 4-D input")
    c = x.shape[1]
    for name, arr in (("gamma", gamma.data), ("beta", beta.data),
                      ("running_mean", running_mean), ("running_var", running_var)):
        if arr.shape != (c,):
            raise ValueError(f"{name} shape {arr.shape} != ({c},)")
    if eps <= 0:
        raise ValueError("eps must be positive")

    xd = x.data
    if training:
        mean = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))  # biased, matches the normalization
        running_mean[:] = (1.0 - momentum) * running_mean + momentum * mean
        running_var[:] = (1.0 - momentum) * running_var + momentum * var
    else:
        mean = running_mean.astype(xd.dtype, copy=False)
        var = running_var.astype(xd.dtype, copy=False)

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean[None, :, None, None]) * inv_std[None, :, None, None]
    xhat = xhat.astype(xd.dtype, copy=False)
    y = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    out = Tensor(y.astype(xd.dtype, copy=False))

    m = xd.shape[0] * xd.shape[2] * xd.shape[3]

    def backward(dy):
        dbeta = dy.sum(axis=(0, 2, 3))
        dgamma = (dy * xhat).sum(axis=(0, 2, 3))
        scale = (gamma.data * inv_std)[None, :, None, None]
        if training:
            # gradient through the batch statistics
            dx = scale * (dy - dbeta[None, :, None, None] / m
                          - xhat * dgamma[None, :, None, None] / m)
        else:
            dx = scale * dy
        return dx.astype(dy.dtype, copy=False), dgamma, dbeta

    return _record(out, (x, gamma, beta), backward)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); subgradient at 0 is 0."""
    out = Tensor(np.maximum(x.data, 0))
    mask = x.data > 0

    def backward(dy):
        return (dy * mask,)

    return _record(out, (x,), backward)


def avgpool2x2(x: Tensor) -> Tensor:
    """2x2 average pooling with stride 2; height and width must be even."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"avgpool2x2 needs even spatial size, got {h}x{w}")
    y = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    out = Tensor(y)

    def backward(dy):
        dx = np.repeat(np.repeat(dy, 2, axis=2), 2, axis=3) * np.asarray(0.25, dtype=dy.dtype)
        return (dx,)

    return _record(out, (x,), backward)


def _resize_axis_coords(in_size: int, out_size: int, dtype):
    """Half-pixel-center source coordinates, split into lower/upper index and
    the upper-tap weight."""
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * (in_size / out_size) - 0.5
    src = np.clip(src, 0.0, in_size - 1.0)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = (src - lo).astype(dtype)
    return lo, hi, frac


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resampling with half-pixel centers and edge clamping.

    Resizing to the input size is an exact identity. The backward pass
    scatters each output gradient onto its four source taps with the
    transposed weights.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError("target size must be at least 1x1")
    n, c, h, w = x.shape
    xd = x.data
    y0, y1, fy = _resize_axis_coords(h, out_h, xd.dtype)
    x0, x1, fx = _resize_axis_coords(w, out_w, xd.dtype)
    wy = fy[:, None]
    wx = fx[None, :]

    g00 = xd[:, :, y0][:, :, :, x0]
    g10 = xd[:, :, y1][:, :, :, x0]
    g01 = xd[:, :, y0][:, :, :, x1]
    g11 = xd[:, :, y1][:, :, :, x1]
    y = (g00 * (1 - wy) * (1 - wx) + g10 * wy * (1 - wx)
         + g01 * (1 - wy) * wx + g11 * wy * wx)
    out = Tensor(y.astype(xd.dtype, copy=False))

    def backward(dy):
        dx = np.zeros((n, c, h, w), dtype=dy.dtype)
        iy0 = np.broadcast_to(y0[:, None], (out_h, out_w))
        iy1 = np.broadcast_to(y1[:, None], (out_h, out_w))
        ix0 = np.broadcast_to(x0[None, :], (out_h, out_w))
        ix1 = np.broadcast_to(x1[None, :], (out_h, out_w))
        np.add.at(dx, (slice(None), slice(None), iy0, ix0), dy * (1 - wy) * (1 - wx))
        np.add.at(dx, (slice(None), slice(None), iy1, ix0), dy * wy * (1 - wx))
        np.add.at(dx, (slice(None), slice(None), iy0, ix1), dy * (1 - wy) * wx)
        np.add.at(dx, (slice(None), slice(None), iy1, ix1), dy * wy * wx)
        return (dx,)

    return _record(out, (x,), backward)


def concat_channels(parts) -> Tensor:
    """Concatenate along the channel axis; all parts must share n, h, w."""
    parts = list(parts)
    if not parts:
        raise ValueError("concat_channels needs at least one tensor")
    n, _, h, w = parts[0].shape
    for p in parts[1:]:
        pn, _, ph, pw = p.shape
        if (pn, ph, pw) != (n, h, w):
            raise ValueError(f"batch/spatial mismatch: {(pn, ph, pw)} != {(n, h, w)}")
    y = np.concatenate([p.data for p in parts], axis=1)
    out = Tensor(y)
    widths = [p.shape[1] for p in parts]

    def backward(dy):
        grads = []
        offset = 0
        for cw in widths:
            grads.append(np.ascontiguousarray(dy[:, offset:offset + cw]))
            offset += cw
        return tuple(grads)

    return _record(out, tuple(parts), backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    """Keep channels [start, stop); the gradient scatters back into that
    range and is zero elsewhere."""
    c = x.shape[1]
    if not (0 <= start < stop <= c):
        raise ValueError(f"slice [{start}, {stop}) out of range for {c} channels")
    out = Tensor(np.ascontiguousarray(x.data[:, start:stop]))

    def backward(dy):
        dx = np.zeros_like(x.data)
        dx[:, start:stop] = dy
        return (dx,)

    return _record(out, (x,), backward)


def softmax_cross_entropy(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean pixel-wise cross-entropy of softmaxed logits against integer
    class targets of shape (n, h, w). Stabilized by max subtraction."""
    n, c, h, w = logits.shape
    target = np.asarray(target)
    if target.shape != (n, h, w):
        raise ValueError(f"target shape {target.shape} != {(n, h, w)}")
    if not np.issubdtype(target.dtype, np.integer):
        raise ValueError("target must be an integer class map")
    if target.min() < 0 or target.max() >= c:
        raise ValueError(f"target class id out of range [0, {c})")

    ld = logits.data
    z = ld - ld.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    idx = target[:, None, :, :]
    picked = np.take_along_axis(z, idx, axis=1)
    m = n * h * w
    loss = (lse - picked).sum() / m
    out = Tensor(np.asarray(loss, dtype=ld.dtype))

    def backward(dy):
        p = np.exp(z - lse)
        np.put_along_axis(p, idx, np.take_along_axis(p, idx, axis=1) - 1, axis=1)
        return (p * (dy / m),)

    return _record(out, (logits,), backward)


def tensor_sum(x: Tensor) -> Tensor:
    """Sum of all elements as a scalar tensor."""
    out = Tensor(np.asarray(x.data.sum(), dtype=x.dtype))

    def backward(dy):
        return (np.full(x.shape, dy, dtype=x.dtype),)

    return _record(out, (x,), backward)
