"""Network descriptions, presets and the sequential model built from them."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from ..errors import InvalidConfig, ShapeMismatch
from .layers import (
    ConvND, Dropout, FullyConnected, MaxPoolND, PReLU, SoftmaxCrossEntropy, softmax,
)

KINDS = ("Conv3D", "Conv2D", "MaxPool3D", "MaxPool2D", "FullyConnected", "PReLU", "Dropout")
CLASSIFIER_STD = 0.01


@dataclass(frozen=True)
class LayerSpec:
    """One layer. ``size``/``stride``/``pad`` are (w, h, t) for 3-D kinds and (w, h) for 2-D."""

    kind: str
    name: str = ""
    size: tuple = ()
    stride: tuple = ()
    depth: int = 0
    pad: tuple = ()
    ratio: float = 0.0

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise InvalidConfig(f"unknown layer kind {self.kind!r}")
        if self.kind.startswith(("Conv", "MaxPool")):
            nd = 3 if self.kind.endswith("3D") else 2
            if len(self.size) != nd or len(self.stride) != nd:
                raise InvalidConfig(f"{self.name or self.kind}: size and stride need {nd} extents")
            if min(self.size) < 1 or min(self.stride) < 1:
                raise InvalidConfig(f"{self.name or self.kind}: extents and strides must be positive")
            if self.pad and (len(self.pad) != nd or min(self.pad) < 0):
                raise InvalidConfig(f"{self.name or self.kind}: pad needs {nd} non-negative extents")
        if self.kind.startswith("Conv") or self.kind == "FullyConnected":
            if self.depth < 1:
                raise InvalidConfig(f"{self.name or self.kind}: depth must be positive")
        if self.kind == "Dropout" and not 0 <= self.ratio < 1:
            raise InvalidConfig(f"{self.name}: dropout ratio must be in [0, 1)")


@dataclass(frozen=True)
class NetworkConfig:
    """Ordered layers plus input shape (C, T, H, W) or (C, H, W) and class count.

    A final FullyConnected layer to ``n_classes`` and the softmax loss are
    appended implicitly.
    """

    name: str
    layers: tuple
    input_shape: tuple
    n_classes: int
    weight_decay: float = 0.005
    input_scale: float = 1.0

    def validate(self) -> None:
        if self.n_classes < 2:
            raise InvalidConfig("need at least two classes")
        for spec in self.layers:
            spec.validate()

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "NetworkConfig":
        d = json.loads(text)
        layers = tuple(LayerSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in l.items()})
                       for l in d.pop("layers"))
        d["input_shape"] = tuple(d["input_shape"])
        return cls(layers=layers, **d)

    def with_classes(self, n: int) -> "NetworkConfig":
        return replace(self, n_classes=n)


def _conv3(name, size, stride, depth, pad=(0, 0, 0)):
    return [LayerSpec("Conv3D", name, size, stride, depth, pad), LayerSpec("PReLU", name + "_prelu")]


def _pool3(name):
    return [LayerSpec("MaxPool3D", name, (2, 2, 2), (2, 2, 2))]


def _fc(name, depth, ratio):
    return [LayerSpec("FullyConnected", name, depth=depth), LayerSpec("PReLU", name + "_prelu"),
            LayerSpec("Dropout", name + "_drop", ratio=ratio)]


def temporal3d_paper(n_classes: int = 101, n_t: int = 24, t: int = 160) -> NetworkConfig:
    """Five 3-D convs, three pools, FC6/FC7; depths 64-128-256-256-512, 4096, 2048."""
    layers = (_conv3("conv1", (3, 3, 3), (1, 1, 2), 64, (1, 1, 1)) + _pool3("pool1")
              + _conv3("conv2", (3, 3, 3), (1, 1, 2), 128, (1, 1, 1)) + _pool3("pool2")
              + _conv3("conv3", (2, 2, 2), (1, 1, 1), 256)
              + _conv3("conv4", (2, 2, 2), (1, 1, 1), 256)
              + _conv3("conv5", (2, 2, 2), (1, 1, 1), 512) + _pool3("pool5")
              + _fc("fc6", 4096, 0.8) + _fc("fc7", 2048, 0.8))
    return NetworkConfig("temporal3d-paper", tuple(layers), (2, t, n_t, n_t), n_classes)


def temporal3d_desk(n_classes: int = 6, n_t: int = 8, t: int = 32) -> NetworkConfig:
    layers = (_conv3("conv1", (3, 3, 3), (1, 1, 2), 16, (1, 1, 1)) + _pool3("pool1")
              + _conv3("conv2", (3, 3, 3), (1, 1, 2), 32, (1, 1, 1)) + _pool3("pool2")
              + _conv3("conv3", (2, 2, 2), (1, 1, 1), 64)
              + _fc("fc6", 64, 0.5) + _fc("fc7", 32, 0.5))
    return NetworkConfig("temporal3d-desk", tuple(layers), (2, t, n_t, n_t), n_classes)


def spatial2d_desk(n_classes: int = 4, n_s: int = 32) -> NetworkConfig:
    def conv(name, d):
        return [LayerSpec("Conv2D", name, (3, 3), (1, 1), d, (1, 1)), LayerSpec("PReLU", name + "_prelu")]

    def pool(name):
        return [LayerSpec("MaxPool2D", name, (2, 2), (2, 2))]

    layers = (conv("conv1", 8) + pool("pool1") + conv("conv2", 16) + pool("pool2")
              + conv("conv3", 32) + pool("pool3") + conv("conv4", 32) + conv("conv5", 32)
              + pool("pool5") + _fc("fc6", 64, 0.5))
    # zero-centred 8-bit pixels span about +-255; bring them to unit scale
    return NetworkConfig("spatial2d-desk", tuple(layers), (3, n_s, n_s), n_classes,
                         input_scale=1 / 255)


PRESETS = {
    "temporal3d-paper": temporal3d_paper,
    "temporal3d-desk": temporal3d_desk,
    "spatial2d-desk": spatial2d_desk,
}


def preset(name: str, **kwargs) -> NetworkConfig:
    try:
        return PRESETS[name](**kwargs)
    except KeyError:
        raise InvalidConfig(f"unknown network preset {name!r}; choose from {', '.join(PRESETS)}") from None


class Network:
    """Sequential model; ``forward`` returns logits, ``loss`` wraps softmax cross-entropy."""

    def __init__(self, cfg: NetworkConfig, seed: int = 0, dtype=np.float64):
        cfg.validate()
        self.cfg = cfg
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.dropout_rng = np.random.default_rng(rng.integers(2**63))
        self.layers = []
        self.shapes = [tuple(cfg.input_shape)]
        shape = tuple(cfg.input_shape)
        for spec in cfg.layers:
            layer = self._build(spec, shape, rng)
            shape = layer.output_shape(shape)
            self.layers.append(layer)
            self.shapes.append(shape)
        head = FullyConnected(int(np.prod(shape)), cfg.n_classes, rng, dtype, std=CLASSIFIER_STD, name="fc_out")
        self.layers.append(head)
        self.shapes.append((cfg.n_classes,))
        self.loss_fn = SoftmaxCrossEntropy()

    def _build(self, spec: LayerSpec, shape, rng):
        rev = lambda t: tuple(reversed(t))  # (w, h, t) -> (t, h, w)
        if spec.kind.startswith("Conv"):
            if len(shape) != len(spec.size) + 1:
                raise ShapeMismatch(f"{spec.name}: {spec.kind} cannot take input of shape {shape}")
            pad = rev(spec.pad) if spec.pad else 0
            return ConvND(shape[0], spec.depth, rev(spec.size), rev(spec.stride), pad, rng,
                          self.dtype, spec.name)
        if spec.kind.startswith("MaxPool"):
            return MaxPoolND(rev(spec.size), rev(spec.stride), spec.name)
        if spec.kind == "FullyConnected":
            return FullyConnected(int(np.prod(shape)), spec.depth, rng, self.dtype, name=spec.name)
        if spec.kind == "PReLU":
            return PReLU(shape[0], dtype=self.dtype, name=spec.name)
        return Dropout(spec.ratio, self.dropout_rng, spec.name)

    def shape_at(self, name: str) -> tuple:
        """Per-sample input shape of the named layer."""
        for layer, shape in zip(self.layers, self.shapes):
            if layer.name == name:
                return shape
        raise KeyError(name)

    def set_dropout(self, ratio: float) -> None:
        for layer in self.layers:
            if isinstance(layer, Dropout):
                layer.ratio = ratio

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != tuple(self.cfg.input_shape):
            raise ShapeMismatch(f"expected input {tuple(self.cfg.input_shape)} per sample, got {x.shape[1:]}")
        if self.cfg.input_scale != 1.0:
            x = x * self.dtype(self.cfg.input_scale)
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def predict_proba(self, x: np.ndarray, batch: int = 64) -> np.ndarray:
        out = [softmax(self.forward(x[i:i + batch])) for i in range(0, len(x), batch)]
        return np.concatenate(out)

    def loss(self, x, labels, train: bool = False) -> float:
        return self.loss_fn.forward(self.forward(x, train), labels)

    def backward(self) -> None:
        g = self.loss_fn.backward()
        for layer in reversed(self.layers):
            g = layer.backward(g)

    def parameters(self):
        """(layer, name, array, grad) for every learnable tensor, in layer order."""
        for layer in self.layers:
            for k, v in layer.params.items():
                yield layer, k, v, layer.grads[k]

    def state(self) -> list[np.ndarray]:
        return [v for _, _, v, _ in self.parameters()]


def parameter_count(net: Network) -> int:
    return int(sum(v.size for v in net.state()))


def closed_form_count(cfg: NetworkConfig) -> int:
    """Weights counted from the layer table: w*h*t*C_in*D + D per conv, in*out + out per FC, one slope per PReLU channel."""
    shape = tuple(cfg.input_shape)
    total = 0
    for spec in cfg.layers:
        if spec.kind.startswith("Conv"):
            total += int(np.prod(spec.size)) * shape[0] * spec.depth + spec.depth
            sp = shape[1:]
            ext = tuple(reversed(spec.size))
            st = tuple(reversed(spec.stride))
            pd = tuple(reversed(spec.pad)) if spec.pad else (0,) * len(ext)
            shape = (spec.depth,) + tuple((n + 2 * p - k) // s + 1 for n, k, s, p in zip(sp, ext, st, pd))
        elif spec.kind.startswith("MaxPool"):
            ext = tuple(reversed(spec.size))
            st = tuple(reversed(spec.stride))
            shape = (shape[0],) + tuple((n - k) // s + 1 for n, k, s in zip(shape[1:], ext, st))
        elif spec.kind == "FullyConnected":
            n_in = int(np.prod(shape))
            total += n_in * spec.depth + spec.depth
            shape = (spec.depth,)
        elif spec.kind == "PReLU":
            total += shape[0]
    n_in = int(np.prod(shape))
    return total + n_in * cfg.n_classes + cfg.n_classes
