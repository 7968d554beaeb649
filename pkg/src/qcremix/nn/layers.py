"""Layer set of the waveform quality network.

Activations are channel-last: convolutional stages see ``(batch, length,
channels)`` and dense stages ``(batch, features)``.  Each layer caches what
its backward pass needs during the most recent training-mode forward call.
"""

from __future__ import annotations

import math

import numpy as np


class Layer:
    """Base class: no parameters, identity shape."""

    trainable = ()

    def __init__(self):
        self.params = {}
        self.grads = {}

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def output_shape(self, shape):
        return shape

    def n_params(self) -> int:
        return int(sum(self.params[k].size for k in self.trainable))

    def zero_grad(self):
        self.grads = {k: np.zeros_like(self.params[k]) for k in self.trainable}

    def astype(self, dtype):
        self.params = {k: v.astype(dtype) for k, v in self.params.items()}
        self.grads = {}

    def buffers(self) -> dict:
        """Non-trainable state saved alongside the parameters."""
        return {}


def _same_padding(length, size, stride):
    out = -(-length // stride)
    total = max((out - 1) * stride + size - length, 0)
    return out, total // 2


class Conv1D(Layer):
    """Strided 1-D convolution with "same" zero padding.

    Output length is ``ceil(L / stride)``; the total padding is split with
    the extra sample on the right.  The kernel is evaluated as a sum of
    ``ceil(size / stride)`` block products so no im2col copy is made.
    """

    trainable = ("weight", "bias")

    def __init__(self, in_channels, filters, size, stride=1):
        super().__init__()
        self.in_channels = int(in_channels)
        self.filters = int(filters)
        self.size = int(size)
        self.stride = int(stride)
        self.params = {
            "weight": np.zeros((self.size, self.in_channels, self.filters), np.float32),
            "bias": np.zeros(self.filters, np.float32),
        }

    @property
    def fan_in(self):
        return self.size * self.in_channels

    def output_shape(self, shape):
        length, _ = shape
        return (-(-length // self.stride), self.filters)

    def _blocks_per_kernel(self):
        return -(-self.size // self.stride)

    def _kernel_blocks(self):
        r, s = self._blocks_per_kernel(), self.stride
        w = self.params["weight"]
        if r * s != self.size:
            w = np.concatenate([w, np.zeros((r * s - self.size,) + w.shape[1:], w.dtype)])
        # (r*s, C, F) -> (s*C, r*F): block j occupies columns j*F:(j+1)*F
        return w.reshape(r, s * self.in_channels, self.filters).transpose(1, 0, 2).reshape(
            s * self.in_channels, r * self.filters)

    def forward(self, x, train=False):
        batch, length, channels = x.shape
        if channels != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {channels}")
        s, r, f = self.stride, self._blocks_per_kernel(), self.filters
        out, left = _same_padding(length, self.size, s)
        n_blocks = out - 1 + r
        right = n_blocks * s - length - left
        xp = np.pad(x, ((0, 0), (left, max(right, 0)), (0, 0)))[:, : n_blocks * s]
        blocks = xp.reshape(batch * n_blocks, s * channels)
        wk = self._kernel_blocks()
        p = (blocks @ wk).reshape(batch, n_blocks, r * f)
        y = p[:, 0:out, 0:f].copy()
        for j in range(1, r):
            y += p[:, j : j + out, j * f : (j + 1) * f]
        y += self.params["bias"]
        if train:
            self._cache = (blocks, x.shape, out, left, n_blocks, wk)
        return y

    def backward(self, dy):
        blocks, (batch, length, channels), out, left, n_blocks, wk = self._cache
        s, r, f = self.stride, self._blocks_per_kernel(), self.filters
        dp = np.zeros((batch, n_blocks, r * f), dy.dtype)
        for j in range(r):
            dp[:, j : j + out, j * f : (j + 1) * f] = dy
        dp = dp.reshape(batch * n_blocks, r * f)
        dwk = blocks.T @ dp
        dw = dwk.reshape(s * channels, r, f).transpose(1, 0, 2).reshape(r * s, channels, f)
        self.grads["weight"] += dw[: self.size]
        self.grads["bias"] += dy.sum(axis=(0, 1))
        dxp = (dp @ wk.T).reshape(batch, n_blocks * s, channels)
        return dxp[:, left : left + length]


class Dense(Layer):
    trainable = ("weight", "bias")

    def __init__(self, in_features, units):
        super().__init__()
        self.in_features = int(in_features)
        self.units = int(units)
        self.params = {
            "weight": np.zeros((self.in_features, self.units), np.float32),
            "bias": np.zeros(self.units, np.float32),
        }

    @property
    def fan_in(self):
        return self.in_features

    def output_shape(self, shape):
        return (self.units,)

    def forward(self, x, train=False):
        if train:
            self._x = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, dy):
        self.grads["weight"] += self._x.T @ dy
        self.grads["bias"] += dy.sum(axis=0)
        return dy @ self.params["weight"].T


def _feature_mean(a):
    # gemv over the flattened leading axes; numpy's strided reduce is slow for few features
    a2 = a.reshape(-1, a.shape[-1])
    return np.ones(a2.shape[0], a.dtype) @ a2 / a2.shape[0]


class BatchNorm(Layer):
    """Per-feature normalization over every axis except the last.

    Training mode uses batch statistics and moves the running estimates by
    ``momentum``; inference mode, or ``frozen=True``, uses the running ones.
    """

    trainable = ("gamma", "beta")

    def __init__(self, features, momentum=0.1, eps=1e-5):
        super().__init__()
        self.features = int(features)
        self.momentum = momentum
        self.eps = eps
        self.frozen = False
        self.params = {"gamma": np.ones(features, np.float32), "beta": np.zeros(features, np.float32)}
        self.running_mean = np.zeros(features, np.float32)
        self.running_var = np.ones(features, np.float32)

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def astype(self, dtype):
        super().astype(dtype)
        self.running_mean = self.running_mean.astype(dtype)
        self.running_var = self.running_var.astype(dtype)

    def forward(self, x, train=False):
        if train and not self.frozen:
            mean = _feature_mean(x)
            var = _feature_mean((x - mean) ** 2)
            n = x.size // self.features
            m = self.momentum
            unbiased = var * (n / max(n - 1, 1))
            self.running_mean = ((1 - m) * self.running_mean + m * mean).astype(self.running_mean.dtype)
            self.running_var = ((1 - m) * self.running_var + m * unbiased).astype(self.running_var.dtype)
        else:
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv
        if train:
            self._cache = (xhat, inv, self.frozen)
        return (xhat * self.params["gamma"] + self.params["beta"]).astype(x.dtype, copy=False)

    def backward(self, dy):
        xhat, inv, frozen = self._cache
        gamma = self.params["gamma"]
        n = dy.size // dy.shape[-1]
        dy_xhat = _feature_mean(dy * xhat)
        dy_mean = _feature_mean(dy)
        self.grads["gamma"] += dy_xhat * n
        self.grads["beta"] += dy_mean * n
        if frozen:
            return (dy * (gamma * inv)).astype(dy.dtype, copy=False)
        dx = (gamma * inv) * (dy - dy_mean - xhat * dy_xhat)
        return dx.astype(dy.dtype, copy=False)


class ReLU(Layer):
    def forward(self, x, train=False):
        if train:
            self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, dy):
        return dy * self._mask


class MaxPool1D(Layer):
    """Non-overlapping max pooling with ceiling output length.

    An odd-length input gets its last frame replicated before pooling, so
    the final window compares that frame with itself.
    """

    def __init__(self, pool=2):
        super().__init__()
        self.pool = int(pool)

    def output_shape(self, shape):
        length, channels = shape
        return (-(-length // self.pool), channels)

    def forward(self, x, train=False):
        batch, length, channels = x.shape
        k = self.pool
        out = -(-length // k)
        extra = out * k - length
        xp = np.concatenate([x, np.repeat(x[:, -1:], extra, axis=1)], axis=1) if extra else x
        windows = xp.reshape(batch, out, k, channels)
        idx = windows.argmax(axis=2)
        if train:
            self._cache = (idx, x.shape, out)
        return np.take_along_axis(windows, idx[:, :, None, :], axis=2)[:, :, 0, :]

    def backward(self, dy):
        idx, (batch, length, channels), out = self._cache
        k = self.pool
        dw = np.zeros((batch, out, k, channels), dy.dtype)
        np.put_along_axis(dw, idx[:, :, None, :], dy[:, :, None, :], axis=2)
        dxp = dw.reshape(batch, out * k, channels)
        dx = dxp[:, :length].copy()
        if out * k > length:
            dx[:, -1] += dxp[:, length:].sum(axis=1)
        return dx


class Flatten(Layer):
    """``(batch, length, channels)`` to ``(batch, channels * length)``, channel-major."""

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, train=False):
        if train:
            self._shape = x.shape
        return x.transpose(0, 2, 1).reshape(x.shape[0], -1)

    def backward(self, dy):
        batch, length, channels = self._shape
        return dy.reshape(batch, channels, length).transpose(0, 2, 1)


class Dropout(Layer):
    """Inverted dropout; inactive outside training.

    ``fixed_mask`` (a 0/1 array broadcastable to the input) replaces the
    random draw, which makes the layer deterministic for gradient checks.
    """

    def __init__(self, rate):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = float(rate)
        self.rng = np.random.default_rng(0)
        self.fixed_mask = None

    def forward(self, x, train=False):
        if not train or self.rate == 0.0:
            self._scale = None
            return x
        if self.fixed_mask is not None:
            keep = np.broadcast_to(self.fixed_mask, x.shape)
        else:
            keep = self.rng.random(x.shape) >= self.rate
        self._scale = (keep / (1.0 - self.rate)).astype(x.dtype)
        return x * self._scale

    def backward(self, dy):
        return dy if self._scale is None else dy * self._scale


class Hardtanh(Layer):
    """Clamp to ``[low, high]``; gradient passes strictly inside the range."""

    def __init__(self, low=0.0, high=100.0):
        super().__init__()
        self.low = low
        self.high = high

    def forward(self, x, train=False):
        if train:
            self._mask = (x > self.low) & (x < self.high)
        return np.clip(x, self.low, self.high)

    def backward(self, dy):
        return dy * self._mask


def he_uniform(rng, shape, fan_in, dtype=np.float32):
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)
