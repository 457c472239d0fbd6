"""Minimal layer library with exact analytic backpropagation.

Layers operate on numpy arrays shaped (batch, channels, height, width) unless
noted. Each layer caches what its backward pass needs during forward; calling
backward first is a state error. Parameters and gradients are exposed as
ordered (name, array) lists so the optimizer and checkpointing can treat the
model as a flat sequence.

Training runs in float32; instantiate layers with dtype=np.float64 for
finite-difference gradient checking.
"""

from __future__ import annotations

import numpy as np


class StateError(RuntimeError):
    """backward() called without a preceding forward()."""


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    def params(self):
        return []

    def grads(self):
        return []

    def buffers(self):
        """Non-trainable state that checkpoints must carry (e.g. running
        batch statistics)."""
        return []

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError


class Conv2d(Layer):
    """Valid (no padding) cross-correlation with stride."""

    def __init__(self, in_channels, out_channels, kernel, stride=(1, 1), rng=None, dtype=np.float32):
        fh, fw = kernel
        rng = rng or np.random.default_rng(0)
        fan_in = in_channels * fh * fw
        self.w = he_uniform(rng, (out_channels, in_channels, fh, fw), fan_in, dtype)
        self.b = np.zeros(out_channels, dtype=dtype)
        self.stride = stride
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cache = None

    def params(self):
        return [("w", self.w), ("b", self.b)]

    def grads(self):
        return [("w", self.dw), ("b", self.db)]

    def forward(self, x, train=False, rng=None):
        out_c, in_c, fh, fw = self.w.shape
        sh, sw = self.stride
        b, c, h, w = x.shape
        if c != in_c or fh > h or fw > w:
            raise ValueError(
                f"input {x.shape} incompatible with filters {self.w.shape}"
            )
        windows = np.lib.stride_tricks.sliding_window_view(x, (fh, fw), axis=(2, 3))
        windows = windows[:, :, ::sh, ::sw]  # (b, c, h', w', fh, fw)
        out = np.einsum("bchwij,ocij->bohw", windows, self.w, optimize=True)
        out += self.b[None, :, None, None]
        self._cache = (x, windows)
        return out

    def backward(self, dout):
        if self._cache is None:
            raise StateError("Conv2d.backward before forward")
        x, windows = self._cache
        out_c, in_c, fh, fw = self.w.shape
        sh, sw = self.stride
        _, _, oh, ow = dout.shape

        self.dw = np.einsum("bohw,bchwij->ocij", dout, windows, optimize=True).astype(self.w.dtype)
        self.db = dout.sum(axis=(0, 2, 3)).astype(self.b.dtype)

        dx = np.zeros_like(x)
        if fw == 1 and fh == x.shape[2] and sw == 1:
            # full-height, width-1 filter: single contraction
            dx += np.einsum("bot,ocj->bcjt", dout[:, :, 0, :], self.w[:, :, :, 0], optimize=True)
        else:
            for i in range(fh):
                for j in range(fw):
                    patch = np.einsum("bohw,oc->bchw", dout, self.w[:, :, i, j], optimize=True)
                    dx[:, :, i : i + oh * sh : sh, j : j + ow * sw : sw] += patch
        self._cache = None
        return dx


class BatchNorm(Layer):
    """Per-channel batch normalization over (batch, spatial) positions."""

    def __init__(self, channels, momentum=0.9, eps=1e-5, dtype=np.float32):
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=np.float64)
        self.running_var = np.ones(channels, dtype=np.float64)
        self.momentum = momentum
        self.eps = eps
        self.dgamma = np.zeros_like(self.gamma)
        self.dbeta = np.zeros_like(self.beta)
        self._cache = None

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def grads(self):
        return [("gamma", self.dgamma), ("beta", self.dbeta)]

    def buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    @staticmethod
    def _axes(x):
        return (0,) + tuple(range(2, x.ndim))

    def forward(self, x, train=False, rng=None):
        axes = self._axes(x)
        shape = (1, x.shape[1]) + (1,) * (x.ndim - 2)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            # updated in place so checkpoint/restore can hold array references
            self.running_mean *= self.momentum
            self.running_mean += (1 - self.momentum) * mean
            self.running_var *= self.momentum
            self.running_var += (1 - self.momentum) * var
        else:
            mean = self.running_mean.astype(x.dtype)
            var = self.running_var.astype(x.dtype)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
        self._cache = (xhat, inv_std, train, x.shape)
        return self.gamma.reshape(shape) * xhat + self.beta.reshape(shape)

    def backward(self, dout):
        if self._cache is None:
            raise StateError("BatchNorm.backward before forward")
        xhat, inv_std, train, xshape = self._cache
        axes = self._axes(dout)
        shape = (1, dout.shape[1]) + (1,) * (dout.ndim - 2)

        self.dgamma = (dout * xhat).sum(axis=axes).astype(self.gamma.dtype)
        self.dbeta = dout.sum(axis=axes).astype(self.beta.dtype)

        dxhat = dout * self.gamma.reshape(shape)
        if train:
            m = dout.size // dout.shape[1]
            dx = (
                dxhat
                - dxhat.mean(axis=axes).reshape(shape)
                - xhat * (dxhat * xhat).mean(axis=axes).reshape(shape)
            ) * inv_std.reshape(shape)
        else:
            dx = dxhat * inv_std.reshape(shape)
        self._cache = None
        return dx


class ReLU(Layer):
    def __init__(self):
        self._mask = None

    def forward(self, x, train=False, rng=None):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        if self._mask is None:
            raise StateError("ReLU.backward before forward")
        dx = dout * self._mask
        self._mask = None
        return dx


class GlobalAvgPool(Layer):
    """Mean over all spatial positions: (b, c, h, w) -> (b, c)."""

    def __init__(self):
        self._shape = None

    def forward(self, x, train=False, rng=None):
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dout):
        if self._shape is None:
            raise StateError("GlobalAvgPool.backward before forward")
        b, c, h, w = self._shape
        dx = np.broadcast_to(dout[:, :, None, None], self._shape) / (h * w)
        self._shape = None
        return dx.astype(dout.dtype)


class MaxPool2d(Layer):
    """2x2 (or kxk) max pooling with stride = kernel; trailing rows/cols
    that do not fill a window are cropped."""

    def __init__(self, kernel=2):
        self.kernel = kernel
        self._cache = None

    def forward(self, x, train=False, rng=None):
        k = self.kernel
        b, c, h, w = x.shape
        oh, ow = h // k, w // k
        if oh == 0 or ow == 0:
            raise ValueError(f"input {x.shape} too small for {k}x{k} pooling")
        cropped = x[:, :, : oh * k, : ow * k]
        blocks = cropped.reshape(b, c, oh, k, ow, k)
        out = blocks.max(axis=(3, 5))
        self._cache = (x.shape, blocks, out)
        return out

    def backward(self, dout):
        if self._cache is None:
            raise StateError("MaxPool2d.backward before forward")
        xshape, blocks, out = self._cache
        k = self.kernel
        b, c, oh, ow = dout.shape
        mask = blocks == out[:, :, :, None, :, None]
        # split gradient among ties to keep the map exact for finite differences
        counts = mask.sum(axis=(3, 5), keepdims=True)
        grad_blocks = mask * (dout[:, :, :, None, :, None] / counts)
        dx = np.zeros(xshape, dtype=dout.dtype)
        dx[:, :, : oh * k, : ow * k] = grad_blocks.reshape(b, c, oh * k, ow * k)
        self._cache = None
        return dx


class Dropout(Layer):
    """Inverted dropout: scales at train time, identity at inference."""

    def __init__(self, rate):
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate
        self._mask = None

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            self._mask = 1.0
            return x
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        keep = 1.0 - self.rate
        self._mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, dout):
        if self._mask is None:
            raise StateError("Dropout.backward before forward")
        dx = dout * self._mask
        self._mask = None
        return dx


class Dense(Layer):
    def __init__(self, in_features, out_features, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.w = he_uniform(rng, (in_features, out_features), in_features, dtype)
        self.b = np.zeros(out_features, dtype=dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._x = None

    def params(self):
        return [("w", self.w), ("b", self.b)]

    def grads(self):
        return [("w", self.dw), ("b", self.db)]

    def forward(self, x, train=False, rng=None):
        self._x = x
        return x @ self.w + self.b

    def backward(self, dout):
        if self._x is None:
            raise StateError("Dense.backward before forward")
        self.dw = (self._x.T @ dout).astype(self.w.dtype)
        self.db = dout.sum(axis=0).astype(self.b.dtype)
        dx = dout @ self.w.T
        self._x = None
        return dx


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch and its gradient w.r.t. logits.

    labels are integer class indices. Returns (loss, dlogits) where dlogits
    already includes the 1/batch factor.
    """
    logits = np.atleast_2d(logits)
    labels = np.atleast_1d(labels)
    p = softmax(logits.astype(np.float64))
    n = logits.shape[0]
    loss = -np.log(np.maximum(p[np.arange(n), labels], 1e-300)).mean()
    grad = p.copy()
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return float(loss), grad.astype(logits.dtype)


class Adam:
    """Adam optimizer over a flat list of parameter arrays (updated in place)."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p, dtype=np.float64) for p in self.params]
        self.v = [np.zeros_like(p, dtype=np.float64) for p in self.params]

    def step(self, grads):
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameter list")
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = g.astype(np.float64)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
            p -= update.astype(p.dtype)
