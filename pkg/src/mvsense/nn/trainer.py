"""Mini-batch SGD with momentum, L2 weight decay and a step learning-rate schedule."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidConfig
from .layers import ConvND, FullyConnected
from .network import Network

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    lr: float = 1e-2
    momentum: float = 0.9
    lr_decay: float = 0.1
    lr_step: int = 1000
    iterations: int = 3000
    dropout: float = 0.8
    weight_decay: float = 0.005
    seed: int = 0

    def validate(self) -> None:
        if self.batch_size < 1 or self.iterations < 1 or self.lr_step < 1:
            raise InvalidConfig("batch size, iterations and lr step must be positive")
        if self.lr < 0 or self.weight_decay < 0 or not 0 <= self.momentum < 1:
            raise InvalidConfig("lr and weight decay must be >= 0, momentum in [0, 1)")
        if not 0 < self.lr_decay <= 1:
            raise InvalidConfig("lr decay factor must be in (0, 1]")
        if self.lr_step > self.iterations:
            raise InvalidConfig(f"lr step {self.lr_step} exceeds {self.iterations} iterations")
        if not 0 <= self.dropout < 1:
            raise InvalidConfig("dropout must be in [0, 1)")

    def lr_at(self, it: int) -> float:
        return self.lr * self.lr_decay ** (it // self.lr_step)


def _decays(layer, name: str) -> bool:
    """L2 decay applies to conv and FC weights, not biases or PReLU slopes."""
    return name == "W" and isinstance(layer, (ConvND, FullyConnected))


class SGD:
    """v <- momentum * v - lr * (g + wd * w);  w <- w + v."""

    def __init__(self, net: Network, momentum: float, weight_decay: float):
        self.net = net
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(v) for v in net.state()]

    def step(self, lr: float) -> None:
        for vel, (layer, name, w, g) in zip(self.velocity, self.net.parameters()):
            step = g + self.weight_decay * w if _decays(layer, name) else g
            vel *= self.momentum
            vel -= lr * step
            w += vel


def train_step(net: Network, opt: SGD, x: np.ndarray, labels: np.ndarray, lr: float) -> float:
    loss = net.loss(x, labels, train=True)
    net.backward()
    opt.step(lr)
    return loss


def train(net: Network, sample_batch, cfg: TrainConfig, log_every: int = 0) -> list[float]:
    """Run ``cfg.iterations`` steps; ``sample_batch(rng, n)`` returns (inputs, labels).

    Returns the per-iteration training loss.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    net.dropout_rng.bit_generator.state = np.random.default_rng(rng.integers(2**63)).bit_generator.state
    net.set_dropout(cfg.dropout)
    opt = SGD(net, cfg.momentum, cfg.weight_decay)
    losses = []
    for it in range(cfg.iterations):
        x, y = sample_batch(rng, cfg.batch_size)
        losses.append(train_step(net, opt, x, y, cfg.lr_at(it)))
        if log_every and (it + 1) % log_every == 0:
            log.info("iter %d  lr %.2e  loss %.4f", it + 1, cfg.lr_at(it), np.mean(losses[-log_every:]))
    return losses
