"""Differentiable numpy layers with explicit forward/backward passes.

Every layer keeps its parameters and gradients in plain float64 arrays and
caches whatever the backward pass needs during forward. One backward call
per forward call; the trainer owns zeroing of gradients between steps.
All computations are deterministic for fixed inputs and RNG streams.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Layer:
    """Common parameter bookkeeping; subclasses fill params/grads dicts."""

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def zero_grads(self) -> None:
        for name, p in self.params.items():
            self.grads[name] = np.zeros_like(p)


class Conv2d(Layer):
    """3x3 convolution, stride 1, same padding, computed via im2col."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = 3
        fan_in = in_channels * self.kernel * self.kernel
        self.params["weight"] = rng.normal(
            0.0, np.sqrt(2.0 / fan_in), (out_channels, fan_in)
        )
        self.params["bias"] = np.zeros(out_channels)
        self.zero_grads()
        self._cols: np.ndarray | None = None
        self._shape: tuple[int, ...] | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, c, h, w = x.shape
        k = self.kernel
        pad = k // 2
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        win = sliding_window_view(xp, (k, k), axis=(2, 3))  # (B, C, H, W, k, k)
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
            b, h * w, c * k * k
        )
        out = cols @ self.params["weight"].T + self.params["bias"]
        self._cols = cols
        self._shape = (b, c, h, w)
        return out.reshape(b, h, w, self.out_channels).transpose(0, 3, 1, 2)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        b, c, h, w = self._shape
        k = self.kernel
        pad = k // 2
        dmat = dout.transpose(0, 2, 3, 1).reshape(b, h * w, self.out_channels)
        self.grads["weight"] += np.einsum("bpo,bpc->oc", dmat, self._cols)
        self.grads["bias"] += dmat.sum(axis=(0, 1))
        dcols = (dmat @ self.params["weight"]).reshape(b, h, w, c, k, k)
        dxp = np.zeros((b, c, h + 2 * pad, w + 2 * pad))
        for di in range(k):
            for dj in range(k):
                dxp[:, :, di : di + h, dj : dj + w] += dcols[:, :, :, :, di, dj].transpose(
                    0, 3, 1, 2
                )
        return dxp[:, :, pad : pad + h, pad : pad + w]


class _BatchNorm(Layer):
    """Shared batch-normalization math; subclasses define the reduce axes.

    Training mode normalizes with per-batch statistics and updates running
    statistics with momentum 0.1; eval mode applies the running statistics
    as a fixed affine map.
    """

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(num_features)
        self.params["beta"] = np.zeros(num_features)
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)
        self.zero_grads()
        self._cache: tuple | None = None

    def _axes(self) -> tuple[int, ...]:
        raise NotImplementedError

    def _expand(self, v: np.ndarray, ndim: int) -> np.ndarray:
        shape = [1] * ndim
        shape[1 if ndim > 2 else -1] = v.size
        return v.reshape(shape)

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        axes = self._axes()
        if train:
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            inv = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - self._expand(mu, x.ndim)) * self._expand(inv, x.ndim)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mu
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var
        else:
            inv = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self._expand(self.running_mean, x.ndim)) * self._expand(inv, x.ndim)
        self._cache = (xhat, inv, train, x.ndim)
        return self._expand(self.params["gamma"], x.ndim) * xhat + self._expand(
            self.params["beta"], x.ndim
        )

    def backward(self, dout: np.ndarray) -> np.ndarray:
        xhat, inv, train, ndim = self._cache
        axes = self._axes()
        self.grads["gamma"] += (dout * xhat).sum(axis=axes)
        self.grads["beta"] += dout.sum(axis=axes)
        dxhat = dout * self._expand(self.params["gamma"], ndim)
        if not train:
            return dxhat * self._expand(inv, ndim)
        m = dout.size // dout.shape[1 if ndim > 2 else -1]
        sum_dxhat = dxhat.sum(axis=axes, keepdims=True)
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=axes, keepdims=True)
        return (
            self._expand(inv, ndim) / m * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
        )


class BatchNorm2d(_BatchNorm):
    def _axes(self) -> tuple[int, ...]:
        return (0, 2, 3)


class BatchNorm1d(_BatchNorm):
    def _axes(self) -> tuple[int, ...]:
        return (0,)


class ReLU(Layer):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return dout * self._mask


class MaxPool2x2(Layer):
    """2x2 max pooling with stride 2; ties route to the first maximum."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"pooling needs even spatial dims, got {h}x{w}")
        xr = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        xr = np.ascontiguousarray(xr).reshape(b, c, h // 2, w // 2, 4)
        self._idx = xr.argmax(axis=-1)
        self._shape = (b, c, h, w)
        return np.take_along_axis(xr, self._idx[..., None], axis=-1)[..., 0]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        b, c, h, w = self._shape
        dz = np.zeros((b, c, h // 2, w // 2, 4))
        np.put_along_axis(dz, self._idx[..., None], dout[..., None], axis=-1)
        dz = dz.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return dz.reshape(b, c, h, w)


class GlobalAvgPool(Layer):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._spatial = x.shape[2:]
        return x.mean(axis=(2, 3))

    def backward(self, dout: np.ndarray) -> np.ndarray:
        h, w = self._spatial
        return np.broadcast_to(dout[:, :, None, None], dout.shape + (h, w)) / (h * w)


class Linear(Layer):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 gain: float = 2.0):
        super().__init__()
        self.params["weight"] = rng.normal(
            0.0, np.sqrt(gain / in_features), (in_features, out_features)
        )
        self.params["bias"] = np.zeros(out_features)
        self.zero_grads()

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        self.grads["weight"] += self._x.T @ dout
        self.grads["bias"] += dout.sum(axis=0)
        return dout @ self.params["weight"].T


class Dropout(Layer):
    """Inverted dropout; active only in training mode with an RNG supplied."""

    def __init__(self, rate: float):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x: np.ndarray, train: bool, rng: np.random.Generator | None) -> np.ndarray:
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("training-mode dropout requires an RNG stream")
        self._mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, dout: np.ndarray) -> np.ndarray:
        if self._mask is None:
            return dout
        return dout * self._mask
