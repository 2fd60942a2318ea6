"""Network building blocks with explicit forward/backward passes.

Everything runs in float64 on (N, C, H, W) arrays. Layers cache whatever
their backward pass needs; backward consumes the upstream gradient, adds
parameter gradients into each Tensor's grad slot, and returns the input
gradient.
"""

import numpy as np


class Tensor:
    """A parameter array paired with a gradient slot of the same shape."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = np.zeros_like(self.values)

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self):
        self.grad[...] = 0.0


def he_normal(rng, shape, fan_in):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def im2col(x, ksize, stride, pad):
    """Unfold (N, C, H, W) into (N * out_h * out_w, C * k * k) patches."""
    n, c, h, w = x.shape
    out_h = (h + 2 * pad - ksize) // stride + 1
    out_w = (w + 2 * pad - ksize) // stride + 1
    if pad > 0:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    col = np.empty((n, c, ksize, ksize, out_h, out_w), dtype=x.dtype)
    for i in range(ksize):
        i_max = i + stride * out_h
        for j in range(ksize):
            j_max = j + stride * out_w
            col[:, :, i, j] = x[:, :, i:i_max:stride, j:j_max:stride]
    return col.transpose(0, 4, 5, 1, 2, 3).reshape(n * out_h * out_w, -1), out_h, out_w


def col2im(col, x_shape, ksize, stride, pad, out_h, out_w):
    """Fold patch gradients back onto the (N, C, H, W) input grid."""
    n, c, h, w = x_shape
    col = col.reshape(n, out_h, out_w, c, ksize, ksize).transpose(0, 3, 4, 5, 1, 2)
    x = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=col.dtype)
    for i in range(ksize):
        i_max = i + stride * out_h
        for j in range(ksize):
            j_max = j + stride * out_w
            x[:, :, i:i_max:stride, j:j_max:stride] += col[:, :, i, j]
    if pad > 0:
        return x[:, :, pad:h + pad, pad:w + pad]
    return x


class Conv2d:
    def __init__(self, in_channels, out_channels, ksize, stride=1, pad=None, rng=None):
        if pad is None:
            pad = ksize // 2
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.ksize = ksize
        self.stride = stride
        self.pad = pad
        rng = rng if rng is not None else np.random.default_rng()
        fan_in = in_channels * ksize * ksize
        self.weight = Tensor(he_normal(rng, (out_channels, in_channels, ksize, ksize), fan_in))
        self.bias = Tensor(np.zeros(out_channels))
        self._cache = None

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise ValueError(
                f"conv expects {self.in_channels} input channels, got {x.shape[1]}"
            )
        col, out_h, out_w = im2col(x, self.ksize, self.stride, self.pad)
        w2d = self.weight.values.reshape(self.out_channels, -1)
        out = col @ w2d.T + self.bias.values
        n = x.shape[0]
        self._cache = (col, x.shape, out_h, out_w)
        return out.reshape(n, out_h, out_w, self.out_channels).transpose(0, 3, 1, 2)

    def backward(self, dout):
        col, x_shape, out_h, out_w = self._cache
        dflat = dout.transpose(0, 2, 3, 1).reshape(-1, self.out_channels)
        w2d = self.weight.values.reshape(self.out_channels, -1)
        self.weight.grad += (dflat.T @ col).reshape(self.weight.shape)
        self.bias.grad += dflat.sum(axis=0)
        dcol = dflat @ w2d
        return col2im(dcol, x_shape, self.ksize, self.stride, self.pad, out_h, out_w)


class ReLU:
    def __init__(self):
        self._mask = None

    def params(self):
        return []

    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class MaxPool2:
    """2x2 max pooling with stride 2; ties route gradient to the first max."""

    def __init__(self):
        self._cache = None

    def params(self):
        return []

    def forward(self, x):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"pooling needs even spatial dims, got {h}x{w}")
        windows = x.reshape(n, c, h // 2, 2, w // 2, 2)
        windows = windows.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
        arg = windows.argmax(axis=-1)
        self._cache = (x.shape, arg)
        return np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        x_shape, arg = self._cache
        n, c, h, w = x_shape
        dwin = np.zeros((n, c, h // 2, w // 2, 4), dtype=dout.dtype)
        np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
        dwin = dwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return dwin.reshape(x_shape)


class ChannelNorm:
    """Per-channel affine normalization against fixed running statistics.

    Statistics are captured lazily from the first batch the layer sees;
    afterwards the layer is a plain affine map, so train and eval behave
    identically and gradients are exact. The scale is floored so a channel
    that happens to be near-constant in the calibration batch cannot turn
    the layer into a huge amplifier for later batches.
    """

    MIN_SIGMA = 0.05

    def __init__(self, channels):
        self.channels = channels
        self.gamma = Tensor(np.ones(channels))
        self.beta = Tensor(np.zeros(channels))
        self.mu = np.zeros(channels)
        self.sigma = np.ones(channels)
        self.calibrated = False
        self._cache = None

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def calibrate(self, x):
        self.mu = x.mean(axis=(0, 2, 3))
        self.sigma = np.maximum(x.std(axis=(0, 2, 3)), self.MIN_SIGMA)
        self.calibrated = True

    def forward(self, x):
        if x.shape[1] != self.channels:
            raise ValueError(f"norm expects {self.channels} channels, got {x.shape[1]}")
        if not self.calibrated:
            self.calibrate(x)
        xhat = (x - self.mu[None, :, None, None]) / self.sigma[None, :, None, None]
        self._cache = xhat
        return self.gamma.values[None, :, None, None] * xhat + self.beta.values[None, :, None, None]

    def backward(self, dout):
        xhat = self._cache
        self.gamma.grad += (dout * xhat).sum(axis=(0, 2, 3))
        self.beta.grad += dout.sum(axis=(0, 2, 3))
        return dout * (self.gamma.values / self.sigma)[None, :, None, None]
