"""Layers with hand-written backward passes.

Activations are NCHW arrays (or NC for dense features). "Same" padding pads
with zeros so that a convolution with stride ``s`` produces ``ceil(n / s)``
outputs; the total padding ``max((out - 1) * s + k - n, 0)`` is split with
the smaller half before the data (``pad_before = total // 2``). The
transposed convolution is the exact adjoint of that convolution, mapping
``n`` positions back to ``n * s``.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import Layer, ShapeError, Tensor


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """Return ``(out, pad_before, pad_after)`` for one spatial axis."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


def _im2col(x, kernel, stride, pads_h, pads_w, out_h, out_w):
    """(B, C, H, W) -> patch array (B, C, k, k, out_h, out_w)."""
    xp = np.pad(x, ((0, 0), (0, 0), pads_h, pads_w))
    b, c = x.shape[:2]
    cols = np.empty((b, c, kernel, kernel, out_h, out_w), dtype=x.dtype)
    for i in range(kernel):
        for j in range(kernel):
            cols[:, :, i, j] = xp[:, :, i: i + stride * out_h: stride, j: j + stride * out_w: stride]
    return cols


def _col2im(cols, x_shape, kernel, stride, pads_h, pads_w, out_h, out_w):
    """Adjoint of :func:`_im2col`: scatter-add patches back onto (B, C, H, W)."""
    b, c, h, w = x_shape
    cols = cols.reshape(b, c, kernel, kernel, out_h, out_w)
    xp = np.zeros((b, c, h + sum(pads_h), w + sum(pads_w)), dtype=cols.dtype)
    for i in range(kernel):
        for j in range(kernel):
            xp[:, :, i: i + stride * out_h: stride, j: j + stride * out_w: stride] += cols[:, :, i, j]
    return xp[:, :, pads_h[0]: pads_h[0] + h, pads_w[0]: pads_w[0] + w]


def _uniform_init(rng, shape, fan_in, dtype):
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Conv2D(Layer):
    """Cross-correlation with "same" padding. Weights are (out, in, k, k)."""

    def __init__(self, in_channels, out_channels, kernel=3, stride=1, rng=None, dtype=np.float32):
        if min(in_channels, out_channels, kernel, stride) < 1:
            raise ValueError("conv hyperparameters must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels, self.out_channels = in_channels, out_channels
        self._kernel, self._stride = kernel, stride
        fan_in = in_channels * kernel * kernel
        self.weight = Tensor(_uniform_init(rng, (out_channels, in_channels, kernel, kernel), fan_in, dtype))
        self.bias = Tensor(np.zeros(out_channels, dtype=dtype))

    def output_shape(self, h, w):
        return same_padding(h, self._kernel, self._stride)[0], same_padding(w, self._kernel, self._stride)[0]

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"Conv2D expects (B, {self.in_channels}, H, W), got {x.shape}")
        b, _, h, w = x.shape
        oh, *ph = same_padding(h, self._kernel, self._stride)
        ow, *pw = same_padding(w, self._kernel, self._stride)
        cols = _im2col(x, self._kernel, self._stride, ph, pw, oh, ow).reshape(b, -1, oh * ow)
        wmat = self.weight.value.reshape(self.out_channels, -1)
        out = np.matmul(wmat, cols) + self.bias.value[:, None]
        self._cache = (x.shape, cols, ph, pw, oh, ow)
        return out.reshape(b, self.out_channels, oh, ow)

    def backward(self, grad):
        x_shape, cols, ph, pw, oh, ow = self._cache
        g = grad.reshape(grad.shape[0], self.out_channels, -1)
        self.weight.accumulate(np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0).reshape(self.weight.shape))
        self.bias.accumulate(g.sum(axis=(0, 2)))
        dcols = np.matmul(self.weight.value.reshape(self.out_channels, -1).T, g)
        return _col2im(dcols, x_shape, self._kernel, self._stride, ph, pw, oh, ow)


class ConvTranspose2D(Layer):
    """Adjoint of :class:`Conv2D`; output spatial size is ``input * stride``.

    Weights are (in, out, k, k) so that the forward pass equals the input
    gradient of a Conv2D holding the same array.
    """

    def __init__(self, in_channels, out_channels, kernel=3, stride=1, rng=None, dtype=np.float32):
        if min(in_channels, out_channels, kernel, stride) < 1:
            raise ValueError("conv hyperparameters must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels, self.out_channels = in_channels, out_channels
        self._kernel, self._stride = kernel, stride
        fan_in = in_channels * kernel * kernel
        self.weight = Tensor(_uniform_init(rng, (in_channels, out_channels, kernel, kernel), fan_in, dtype))
        self.bias = Tensor(np.zeros(out_channels, dtype=dtype))

    def output_shape(self, h, w):
        return h * self._stride, w * self._stride

    def _geometry(self, h, w):
        oh, ow = self.output_shape(h, w)
        _, *ph = same_padding(oh, self._kernel, self._stride)
        _, *pw = same_padding(ow, self._kernel, self._stride)
        return oh, ow, ph, pw

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"ConvTranspose2D expects (B, {self.in_channels}, H, W), got {x.shape}")
        b, _, h, w = x.shape
        oh, ow, ph, pw = self._geometry(h, w)
        x_flat = x.reshape(b, self.in_channels, h * w)
        cols = np.matmul(self.weight.value.reshape(self.in_channels, -1).T, x_flat)
        out = _col2im(cols, (b, self.out_channels, oh, ow), self._kernel, self._stride, ph, pw, h, w)
        self._cache = (x_flat, (h, w), ph, pw, oh, ow)
        return out + self.bias.value[None, :, None, None]

    def backward(self, grad):
        x_flat, (h, w), ph, pw, oh, ow = self._cache
        b = grad.shape[0]
        gcols = _im2col(grad, self._kernel, self._stride, ph, pw, h, w).reshape(b, -1, h * w)
        self.weight.accumulate(np.matmul(x_flat, gcols.transpose(0, 2, 1)).sum(axis=0).reshape(self.weight.shape))
        self.bias.accumulate(grad.sum(axis=(0, 2, 3)))
        dx = np.matmul(self.weight.value.reshape(self.in_channels, -1), gcols)
        return dx.reshape(b, self.in_channels, h, w)


class Dense(Layer):
    def __init__(self, in_features, out_features, rng=None, dtype=np.float32):
        if min(in_features, out_features) < 1:
            raise ValueError("dense sizes must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Tensor(_uniform_init(rng, (in_features, out_features), in_features, dtype))
        self.bias = Tensor(np.zeros(out_features, dtype=dtype))

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.weight.shape[0]:
            raise ShapeError(f"Dense expects (B, {self.weight.shape[0]}), got {x.shape}")
        self._x = x
        return x @ self.weight.value + self.bias.value

    def backward(self, grad):
        self.weight.accumulate(self._x.T @ grad)
        self.bias.accumulate(grad.sum(axis=0))
        return grad @ self.weight.value.T


def _channel_view(param, ndim):
    return param.reshape((1, -1) + (1,) * (ndim - 2))


class PReLU(Layer):
    """Leaky ReLU with one learnable negative slope per channel (axis 1)."""

    def __init__(self, channels, init=0.25, dtype=np.float32):
        self.slope = Tensor(np.full(channels, init, dtype=dtype))

    def forward(self, x):
        a = _channel_view(self.slope.value, x.ndim)
        self._neg = np.minimum(x, 0)
        self._factor = np.where(x > 0, x.dtype.type(1), a)
        return x * self._factor

    def backward(self, grad):
        axes = (0,) + tuple(range(2, grad.ndim))
        self.slope.accumulate((grad * self._neg).sum(axis=axes))
        return grad * self._factor


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, grad):
        return grad * self._mask


class Sigmoid(Layer):
    def forward(self, x):
        # split by sign to stay finite for large |x|
        e = np.exp(-np.abs(x))
        self._y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
        return self._y

    def backward(self, grad):
        return grad * self._y * (1.0 - self._y)


class GlobalAvgPool(Layer):
    """(B, C, H, W) -> (B, C) spatial mean."""

    def forward(self, x):
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, grad):
        b, c, h, w = self._shape
        return np.broadcast_to(grad[:, :, None, None] / (h * w), self._shape).copy()


class Concat(Layer):
    """Concatenate a sequence of (B, n_i) arrays along axis 1."""

    def forward(self, *xs):
        self._sizes = [x.shape[1] for x in xs]
        return np.concatenate(xs, axis=1)

    def backward(self, grad):
        splits = np.cumsum(self._sizes)[:-1]
        return tuple(np.split(grad, splits, axis=1))


class PowerNormalize(Layer):
    """Scale each sample so its ``k`` complex symbols have mean power ``P``.

    The input holds ``2k`` reals per sample (real and imaginary parts in any
    fixed arrangement); ``z = sqrt(k P) * x / ||x||``. An all-zero sample has
    no direction; it is mapped to the constant vector of the right power and
    passes no gradient.
    """

    def __init__(self, power=1.0):
        if power <= 0:
            raise ValueError("power must be positive")
        self.power = float(power)

    def forward(self, x):
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] % 2:
            raise ShapeError("power normalization needs an even number of reals per sample")
        k = flat.shape[1] // 2
        norm = np.sqrt(np.sum(flat * flat, axis=1, keepdims=True))
        dead = norm[:, 0] == 0
        if np.any(dead):
            flat = flat.copy()
            flat[dead] = 1.0
            norm = np.where(dead[:, None], np.sqrt(flat.shape[1]), norm).astype(flat.dtype)
        scale = np.sqrt(k * self.power)
        self._cache = (x.shape, flat, norm, scale, dead)
        return (scale * flat / norm).reshape(x.shape)

    def backward(self, grad):
        shape, flat, norm, scale, dead = self._cache
        g = grad.reshape(shape[0], -1)
        proj = np.sum(flat * g, axis=1, keepdims=True) / (norm * norm)
        out = scale / norm * (g - flat * proj)
        out[dead] = 0.0
        return out.reshape(shape)
