"""Neural-network layers with explicit forward and backward passes.

All arrays are float64 NCHW. Each layer owns its parameters and, after a
backward call, the matching gradients. Layers cache whatever the backward
pass needs; a forward call invalidates the previous cache.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError


def _conv_correlate(x, w, bias, pad):
    """'Same'-size 2-D correlation: y[b,o] = sum_c x[b,c] * w[o,c] + bias[o]."""
    k = w.shape[2]
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    y = np.einsum("bchwij,ocij->bohw", cols, w, optimize=True)
    if bias is not None:
        y += bias[:, None, None]
    return y, cols


class Layer:
    """Base: parameter-free identity-ish layer interface."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def param_items(self):
        return list(self.params.items())


class Conv2D(Layer):
    """3x3 (zero-padded, size-preserving) or 1x1 convolution.

    Bias is optional; convolutions feeding straight into batch normalization
    are built without one because the normalization would cancel it.
    """

    def __init__(self, c_in, c_out, ksize, rng, bias=False):
        super().__init__()
        self.c_in, self.c_out, self.ksize = c_in, c_out, ksize
        self.pad = ksize // 2
        fan_in = c_in * ksize * ksize
        limit = np.sqrt(6.0 / fan_in)  # He-uniform
        self.params["w"] = rng.uniform(-limit, limit, size=(c_out, c_in, ksize, ksize))
        if bias:
            self.params["b"] = np.zeros(c_out)
        self._cols = None

    def forward(self, x, train=False):
        if x.shape[1] != self.c_in:
            raise ShapeError(f"conv expects {self.c_in} channels, got {x.shape[1]}")
        y, cols = _conv_correlate(x, self.params["w"], self.params.get("b"), self.pad)
        self._cols = cols
        return y

    def backward(self, dy):
        w = self.params["w"]
        self.grads["w"] = np.einsum("bchwij,bohw->ocij", self._cols, dy, optimize=True)
        if "b" in self.params:
            self.grads["b"] = dy.sum(axis=(0, 2, 3))
        # Gradient w.r.t. input: correlate dy with the spatially flipped,
        # channel-transposed kernel.
        w_flip = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        dx, _ = _conv_correlate(dy, w_flip, None, self.pad)
        return dx


class ConvTranspose2D(Layer):
    """3x3 stride-2 transposed convolution doubling the spatial size."""

    def __init__(self, c_in, c_out, rng, bias=False):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        fan_in = c_in * 9
        limit = np.sqrt(6.0 / fan_in)
        self.params["w"] = rng.uniform(-limit, limit, size=(c_out, c_in, 3, 3))
        if bias:
            self.params["b"] = np.zeros(c_out)
        self._stuffed_cols = None

    def _stuff(self, x):
        b, c, h, w = x.shape
        z = np.zeros((b, c, 2 * h, 2 * w))
        z[:, :, ::2, ::2] = x
        return z

    def forward(self, x, train=False):
        if x.shape[1] != self.c_in:
            raise ShapeError(f"conv expects {self.c_in} channels, got {x.shape[1]}")
        # Transposed conv == zero-stuff then convolve (flipped-kernel correlate).
        z = self._stuff(x)
        w_flip = self.params["w"][:, :, ::-1, ::-1]
        y, cols = _conv_correlate(z, w_flip, self.params.get("b"), pad=1)
        self._stuffed_cols = cols
        return y

    def backward(self, dy):
        dw_flip = np.einsum("bchwij,bohw->ocij", self._stuffed_cols, dy, optimize=True)
        self.grads["w"] = dw_flip[:, :, ::-1, ::-1]
        if "b" in self.params:
            self.grads["b"] = dy.sum(axis=(0, 2, 3))
        w_flip = self.params["w"][:, :, ::-1, ::-1]
        back = w_flip[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)  # == w transposed
        dz, _ = _conv_correlate(dy, back, None, pad=1)
        return dz[:, :, ::2, ::2]


class BatchNorm2D(Layer):
    """Per-channel batch normalization with running statistics."""

    def __init__(self, channels, momentum=0.99, eps=1e-3):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)
        self._cache = None

    def forward(self, x, train=False):
        if x.shape[1] != self.channels:
            raise ShapeError(f"batchnorm expects {self.channels} channels, got {x.shape[1]}")
        if train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = self.momentum
            self.buffers["running_mean"] = m * self.buffers["running_mean"] + (1 - m) * mean
            self.buffers["running_var"] = m * self.buffers["running_var"] + (1 - m) * var
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[:, None, None]) * inv_std[:, None, None]
        self._cache = (xhat, inv_std, train, x.shape)
        return self.params["gamma"][:, None, None] * xhat + self.params["beta"][:, None, None]

    def backward(self, dy):
        xhat, inv_std, train, shape = self._cache
        self.grads["gamma"] = (dy * xhat).sum(axis=(0, 2, 3))
        self.grads["beta"] = dy.sum(axis=(0, 2, 3))
        dxhat = dy * self.params["gamma"][:, None, None]
        if not train:
            return dxhat * inv_std[:, None, None]
        n = shape[0] * shape[2] * shape[3]
        sum_dxhat = dxhat.sum(axis=(0, 2, 3), keepdims=True)
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        return (inv_std[:, None, None] / n) * (
            n * dxhat - sum_dxhat - xhat * sum_dxhat_xhat
        )


class ELU(Layer):
    def __init__(self, alpha=1.0):
        super().__init__()
        self.alpha = alpha
        self._cache = None

    def forward(self, x, train=False):
        neg = self.alpha * np.expm1(np.minimum(x, 0.0))
        y = np.where(x > 0, x, neg)
        self._cache = (x > 0, neg)
        return y

    def backward(self, dy):
        pos, neg = self._cache
        return dy * np.where(pos, 1.0, neg + self.alpha)


class AvgPool2x2(Layer):
    def forward(self, x, train=False):
        b, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"average pooling needs even spatial dims, got {h}x{w}")
        self._in_shape = x.shape
        return x.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(self, dy):
        b, c, h, w = self._in_shape
        up = np.repeat(np.repeat(dy, 2, axis=2), 2, axis=3)
        return up / 4.0


class NearestUpsample2x2(Layer):
    def forward(self, x, train=False):
        return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)

    def backward(self, dy):
        b, c, h, w = dy.shape
        return dy.reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


class Sigmoid(Layer):
    def forward(self, x, train=False):
        # Stable two-branch logistic.
        y = np.empty_like(x)
        pos = x >= 0
        y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        y[~pos] = ex / (1.0 + ex)
        self._y = y
        return y

    def backward(self, dy):
        return dy * self._y * (1.0 - self._y)
