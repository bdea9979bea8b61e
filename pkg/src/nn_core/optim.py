from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from common.errors import ConfigurationError
from nn_core.tensor import Parameter

OPTIMIZER_KINDS = ("sgd", "momentum", "adam")


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ConfigurationError(f"Unknown optimizer {self.kind!r}; expected one of {OPTIMIZER_KINDS}")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be non-negative")


class Optimizer:
    def __init__(self, params: Iterable[Parameter], lr: float, weight_decay: float = 0.0):
        if lr <= 0:
            raise ConfigurationError(f"Learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def _gradient(self, p: Parameter) -> np.ndarray:
        if self.weight_decay:
            return p.grad + self.weight_decay * p.data
        return p.grad

    def step(self) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    """theta <- theta - lr * grad, optionally with heavy-ball momentum."""

    def __init__(self, params: Iterable[Parameter], lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        super().__init__(params, lr, weight_decay)
        if not 0.0 <= momentum < 1.0:
            raise ConfigurationError(f"Momentum must lie in [0, 1), got {momentum}")
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, v in zip(self.params, self.velocity):
            grad = self._gradient(p)
            if self.momentum:
                v *= self.momentum
                v += grad
                grad = v
            p.data -= self.lr * grad


class Adam(Optimizer):
    def __init__(
        self,
        params: Iterable[Parameter],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        super().__init__(params, lr, weight_decay)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            grad = self._gradient(p)
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def build_optimizer(params: Iterable[Parameter], lr: float, config: OptimizerConfig | None = None) -> Optimizer:
    config = config or OptimizerConfig(kind="sgd")
    if config.kind == "sgd":
        return SGD(params, lr, weight_decay=config.weight_decay)
    if config.kind == "momentum":
        return SGD(params, lr, momentum=config.momentum, weight_decay=config.weight_decay)
    return Adam(params, lr, config.beta1, config.beta2, config.eps, config.weight_decay)


def optimizer_step(params: Iterable[Parameter], lr: float, config: OptimizerConfig | None = None) -> None:
    """One stateless plain-SGD style update; stateful variants go through build_optimizer."""
    build_optimizer(params, lr, config).step()
