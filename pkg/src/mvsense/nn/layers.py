"""Layers with hand-written backward passes.

Activations are channels-first: (N, C, *spatial) for conv and pool layers,
(N, F) for fully connected ones. Every layer keeps what its backward pass
needs from the latest forward call.
"""

from __future__ import annotations

import itertools

import numpy as np

from ..errors import InvalidInput, ShapeMismatch


def he_init(shape, fan_in: int, rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    """Samples from N(0, 2 / fan_in)."""
    if fan_in <= 0:
        raise ValueError(f"fan_in must be positive, got {fan_in}")
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def he_init_3d(extents, c_in: int, d: int, rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    """(D, C_in, t, h, w) filters for (w, h, t) ``extents``; fan_in = w*h*t*C_in."""
    w, h, t = extents
    return he_init((d, c_in, t, h, w), w * h * t * c_in, rng, dtype)


def out_extent(n: int, k: int, s: int, p: int = 0) -> int:
    return (n + 2 * p - k) // s + 1


class Layer:
    name = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, shape: tuple) -> tuple:
        """Per-sample output shape for a per-sample input ``shape``."""
        raise NotImplementedError


def _windows(x: np.ndarray, kernel, stride):
    """Strided (N, C, *out, *kernel) view of ``x``'s trailing axes."""
    nd = len(kernel)
    axes = tuple(range(2, 2 + nd))
    v = np.lib.stride_tricks.sliding_window_view(x, kernel, axis=axes)
    return v[(slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)]


class ConvND(Layer):
    """N-d convolution (cross-correlation) with per-axis stride and symmetric zero padding."""

    def __init__(self, c_in: int, d: int, kernel, stride, pad, rng, dtype=np.float64, name="conv"):
        super().__init__()
        self.kernel, self.stride = tuple(kernel), tuple(stride)
        self.pad = tuple(pad) if not np.isscalar(pad) else (int(pad),) * len(self.kernel)
        self.nd = len(self.kernel)
        self.name = name
        fan_in = c_in * int(np.prod(self.kernel))
        self.params = {"W": he_init((d, c_in) + self.kernel, fan_in, rng, dtype),
                       "b": np.zeros(d, dtype=dtype)}
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def output_shape(self, shape):
        c, *sp = shape
        if c != self.params["W"].shape[1]:
            raise ShapeMismatch(f"{self.name}: expects {self.params['W'].shape[1]} channels, got {c}")
        if len(sp) != self.nd:
            raise ShapeMismatch(f"{self.name}: expects {self.nd} spatial axes, got {len(sp)}")
        out = tuple(out_extent(n, k, s, p) for n, k, s, p in zip(sp, self.kernel, self.stride, self.pad))
        if min(out) < 1:
            raise ShapeMismatch(f"{self.name}: input {tuple(sp)} is smaller than kernel {self.kernel}")
        return (self.params["W"].shape[0],) + out

    def _padded(self, x):
        if not any(self.pad):
            return x
        return np.pad(x, [(0, 0), (0, 0)] + [(p, p) for p in self.pad])

    def forward(self, x, train=False):
        self.output_shape(x.shape[1:])
        xp = self._padded(x)
        self._xp_shape = xp.shape
        cols = _windows(xp, self.kernel, self.stride)
        self._cols = cols
        nd = self.nd
        w = self.params["W"]
        # contract over C and the kernel axes -> (N, *out, D)
        out = np.tensordot(cols, w, axes=([1] + list(range(2 + nd, 2 + 2 * nd)),
                                          [1] + list(range(2, 2 + nd))))
        out = np.moveaxis(out, -1, 1)
        return out + self.params["b"].reshape((1, -1) + (1,) * nd)

    def backward(self, grad):
        nd = self.nd
        w = self.params["W"]
        sp_axes = list(range(2, 2 + nd))
        self.grads["b"][...] = grad.sum(axis=tuple([0] + sp_axes))
        # dW[d, c, k...] = sum_{n, o...} grad[n, d, o...] * cols[n, c, o..., k...]
        self.grads["W"][...] = np.tensordot(grad, self._cols, axes=([0] + sp_axes, [0] + sp_axes))
        dxp = np.zeros(self._xp_shape, dtype=grad.dtype)
        out_sp = grad.shape[2:]
        for k in itertools.product(*(range(kk) for kk in self.kernel)):
            # contribution of kernel tap k: (N, D, o...) x (D, C) -> (N, C, o...)
            contrib = np.tensordot(grad, w[(slice(None), slice(None)) + k], axes=([1], [0]))
            contrib = np.moveaxis(contrib, -1, 1)
            sl = tuple(slice(kk, kk + s * (o - 1) + 1, s) for kk, s, o in zip(k, self.stride, out_sp))
            dxp[(slice(None), slice(None)) + sl] += contrib
        if any(self.pad):
            sl = tuple(slice(p, n - p) for p, n in zip(self.pad, self._xp_shape[2:]))
            dxp = dxp[(slice(None), slice(None)) + sl]
        return dxp


class MaxPoolND(Layer):
    """Max pooling without padding; trailing remainders are dropped."""

    def __init__(self, kernel, stride, name="pool"):
        super().__init__()
        self.kernel, self.stride = tuple(kernel), tuple(stride)
        self.nd = len(self.kernel)
        self.name = name

    def output_shape(self, shape):
        c, *sp = shape
        out = tuple(out_extent(n, k, s) for n, k, s in zip(sp, self.kernel, self.stride))
        if len(sp) != self.nd or min(out) < 1:
            raise ShapeMismatch(f"{self.name}: cannot pool {tuple(sp)} with window {self.kernel}")
        return (c,) + out

    def forward(self, x, train=False):
        self.output_shape(x.shape[1:])
        win = _windows(x, self.kernel, self.stride)
        flat = win.reshape(win.shape[:2 + self.nd] + (-1,))
        self._arg = flat.argmax(axis=-1)
        self._x_shape = x.shape
        return np.take_along_axis(flat, self._arg[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        dx = np.zeros(self._x_shape, dtype=grad.dtype)
        out_sp = grad.shape[2:]
        for i, k in enumerate(itertools.product(*(range(kk) for kk in self.kernel))):
            sl = tuple(slice(kk, kk + s * (o - 1) + 1, s) for kk, s, o in zip(k, self.stride, out_sp))
            dx[(slice(None), slice(None)) + sl] += np.where(self._arg == i, grad, 0)
        return dx


class FullyConnected(Layer):
    """Affine map of the flattened per-sample input."""

    def __init__(self, n_in: int, n_out: int, rng, dtype=np.float64, std: float | None = None,
                 name="fc"):
        super().__init__()
        self.name = name
        w = (rng.standard_normal((n_in, n_out)) * std).astype(dtype) if std is not None \
            else he_init((n_in, n_out), n_in, rng, dtype)
        self.params = {"W": w, "b": np.zeros(n_out, dtype=dtype)}
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def output_shape(self, shape):
        n_in = int(np.prod(shape))
        if n_in != self.params["W"].shape[0]:
            raise ShapeMismatch(f"{self.name}: expects {self.params['W'].shape[0]} inputs, got {n_in}")
        return (self.params["W"].shape[1],)

    def forward(self, x, train=False):
        self._x_shape = x.shape
        self._x = x.reshape(x.shape[0], -1)
        return self._x @ self.params["W"] + self.params["b"]

    def backward(self, grad):
        self.grads["W"][...] = self._x.T @ grad
        self.grads["b"][...] = grad.sum(axis=0)
        return (grad @ self.params["W"].T).reshape(self._x_shape)


class PReLU(Layer):
    """max(0, x) + a * min(0, x) with one learnable slope per channel (axis 1)."""

    def __init__(self, channels: int, init: float = 0.25, dtype=np.float64, name="prelu"):
        super().__init__()
        self.name = name
        self.params = {"a": np.full(channels, init, dtype=dtype)}
        self.grads = {"a": np.zeros(channels, dtype=dtype)}

    def output_shape(self, shape):
        if shape[0] != self.params["a"].size:
            raise ShapeMismatch(f"{self.name}: expects {self.params['a'].size} channels, got {shape[0]}")
        return shape

    def _a(self, ndim):
        return self.params["a"].reshape((1, -1) + (1,) * (ndim - 2))

    def forward(self, x, train=False):
        self._x = x
        return np.where(x > 0, x, self._a(x.ndim) * x)

    def backward(self, grad):
        x = self._x
        neg = x <= 0
        axes = tuple(i for i in range(x.ndim) if i != 1)
        self.grads["a"][...] = (grad * np.where(neg, x, 0)).sum(axis=axes)
        return np.where(neg, self._a(x.ndim) * grad, grad)


class Dropout(Layer):
    """Inverted dropout: drops with probability ``ratio`` and rescales survivors in training."""

    def __init__(self, ratio: float, rng: np.random.Generator, name="dropout"):
        super().__init__()
        if not 0 <= ratio < 1:
            raise ValueError(f"dropout ratio must be in [0, 1), got {ratio}")
        self.ratio = ratio
        self.rng = rng
        self.name = name

    def output_shape(self, shape):
        return shape

    def forward(self, x, train=False):
        if not train or self.ratio == 0:
            self._mask = None
            return x
        keep = 1.0 - self.ratio
        self._mask = (self.rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, grad):
        return grad if self._mask is None else grad * self._mask


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class SoftmaxCrossEntropy:
    """Mean cross-entropy of softmax(logits) against integer labels."""

    name = "softmax"

    def forward(self, logits: np.ndarray, labels: np.ndarray) -> float:
        labels = np.asarray(labels)
        n, c = logits.shape
        if labels.min() < 0 or labels.max() >= c:
            raise InvalidInput(f"labels must lie in [0, {c}), got range [{labels.min()}, {labels.max()}]")
        self._p = softmax(logits)
        self._labels = labels
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        return float(-logp[np.arange(n), labels].mean())

    def backward(self) -> np.ndarray:
        n = self._p.shape[0]
        g = self._p.copy()
        g[np.arange(n), self._labels] -= 1
        return g / n
