"""Layer primitives: dense, conv2d, batch-norm, ReLU, dropout and global pooling.

The ``forward_*`` functions are the differentiable operations; the Module
classes own the parameters/buffers and route through them.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from common.errors import ConfigurationError, ContractError, DimensionError
from nn_core.tensor import DTYPE, Parameter, Tensor, lift

Mode = Literal["train", "eval"]


# --------------------------------------------------------------------------
# Functional forward passes
# --------------------------------------------------------------------------
def forward_dense(inputs: Tensor, weights: Parameter, bias: Parameter) -> Tensor:
    inputs = lift(inputs)
    if inputs.ndim != 2 or inputs.shape[1] != weights.shape[0]:
        raise DimensionError(
            f"Dense input shape {inputs.shape} does not match weight shape {weights.shape}"
        )
    return inputs @ weights + bias


def forward_conv2d(inputs: Tensor, kernels: Parameter, bias: Parameter, stride: int = 1) -> Tensor:
    """Valid (no padding) cross-correlation of [B, C_in, H, W] with [C_out, C_in, kH, kW]."""
    inputs = lift(inputs)
    if stride < 1:
        raise ConfigurationError(f"Convolution stride must be positive, got {stride}")
    if inputs.ndim != 4:
        raise DimensionError(f"Conv2d expects [batch, C, H, W], got {inputs.shape}")
    batch, c_in, height, width = inputs.shape
    c_out, k_in, k_h, k_w = kernels.shape
    if k_in != c_in:
        raise DimensionError(f"Conv2d input channels {inputs.shape} do not match kernels {kernels.shape}")
    if k_h > height or k_w > width:
        raise DimensionError(f"Kernel {kernels.shape} is larger than input {inputs.shape}")

    out_h = (height - k_h) // stride + 1
    out_w = (width - k_w) // stride + 1
    x = inputs.data
    k = kernels.data
    # [B, C, out_h, out_w, kH, kW] -> [B, out_h, out_w, C*kH*kW]
    windows = sliding_window_view(x, (k_h, k_w), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(
        batch, out_h, out_w, c_in * k_h * k_w
    )
    flat_k = k.reshape(c_out, -1)
    out = (cols @ flat_k.T).transpose(0, 3, 1, 2) + bias.data[None, :, None, None]

    def backward(g):
        g_cols = g.transpose(0, 2, 3, 1)  # [B, out_h, out_w, C_out]
        grad_k = np.tensordot(g_cols, cols, axes=([0, 1, 2], [0, 1, 2])).reshape(k.shape)
        grad_b = g.sum(axis=(0, 2, 3))
        grad_win = (g_cols @ flat_k).reshape(batch, out_h, out_w, c_in, k_h, k_w)
        grad_x = np.zeros_like(x)
        for i in range(k_h):
            for j in range(k_w):
                grad_x[:, :, i:i + stride * (out_h - 1) + 1:stride, j:j + stride * (out_w - 1) + 1:stride] += (
                    grad_win[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        return grad_x, grad_k, grad_b

    return Tensor(out, (inputs, kernels, bias), backward)


@dataclass
class RunningMoments:
    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1


def forward_batchnorm(
    inputs: Tensor,
    scale: Parameter,
    shift: Parameter,
    eps: float,
    mode: Mode,
    running: RunningMoments,
) -> Tensor:
    """Batch normalization over the batch axis of [batch, features].

    Train mode normalizes with the biased batch variance and folds the
    unbiased estimate into the running moments.
    """
    inputs = lift(inputs)
    if inputs.ndim != 2 or inputs.shape[1] != scale.shape[0]:
        raise DimensionError(f"Batch-norm input {inputs.shape} does not match {scale.shape[0]} features")
    x = inputs.data
    n = x.shape[0]
    if n == 0:
        return Tensor(np.empty_like(x), (inputs, scale, shift), lambda g: (g, None, None))
    gamma = scale.data

    if mode == "eval":
        inv_std = 1.0 / np.sqrt(running.var + eps)
        x_hat = (x - running.mean) * inv_std
        out = gamma * x_hat + shift.data

        def backward_eval(g):
            return g * gamma * inv_std, (g * x_hat).sum(axis=0), g.sum(axis=0)

        return Tensor(out, (inputs, scale, shift), backward_eval)

    if n < 2:
        raise ContractError("Train-mode batch normalization needs at least 2 samples per batch")
    mean = x.mean(axis=0)
    var = x.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean) * inv_std
    out = gamma * x_hat + shift.data

    m = running.momentum
    running.mean = (1.0 - m) * running.mean + m * mean
    running.var = (1.0 - m) * running.var + m * var * n / (n - 1)

    def backward_train(g):
        g_hat = g * gamma
        grad_x = inv_std / n * (n * g_hat - g_hat.sum(axis=0) - x_hat * (g_hat * x_hat).sum(axis=0))
        return grad_x, (g * x_hat).sum(axis=0), g.sum(axis=0)

    return Tensor(out, (inputs, scale, shift), backward_train)


def forward_activation_relu(inputs: Tensor) -> Tensor:
    inputs = lift(inputs)
    mask = inputs.data > 0
    return Tensor(np.where(mask, inputs.data, 0.0), (inputs,), lambda g: (g * mask,))


def forward_dropout(inputs: Tensor, p: float, mode: Mode, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p) at train time."""
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"Dropout rate must lie in [0, 1), got {p}")
    inputs = lift(inputs)
    if mode == "eval" or p == 0.0:
        return inputs
    keep = (rng.random(inputs.shape) >= p) / (1.0 - p)
    return Tensor(inputs.data * keep, (inputs,), lambda g: (g * keep,))


def forward_global_avg_pool(inputs: Tensor) -> Tensor:
    """[B, C, H, W] -> [B, C]"""
    inputs = lift(inputs)
    if inputs.ndim != 4:
        raise DimensionError(f"Global average pooling expects [batch, C, H, W], got {inputs.shape}")
    return inputs.mean(axis=(2, 3))


# --------------------------------------------------------------------------
# Modules
# --------------------------------------------------------------------------
def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(DTYPE)


class Module:
    """Base class for layers and models.

    Parameters, buffers and sub-modules are discovered from instance
    attributes (including lists of modules) in definition order.
    """

    training: bool = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    @property
    def mode(self) -> Mode:
        return "train" if self.training else "eval"

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for name, attr in vars(self).items():
            if isinstance(attr, Module):
                yield name, attr
            elif isinstance(attr, (list, tuple)):
                for i, item in enumerate(attr):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, attr in vars(self).items():
            if isinstance(attr, Parameter):
                yield prefix + name, attr
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, array in self.buffers().items():
            yield prefix + name, array
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def load_buffer(self, name: str, value: np.ndarray) -> None:
        raise KeyError(name)

    def train(self) -> "Module":
        self.training = True
        for _, child in self.children():
            child.train()
        return self

    def eval(self) -> "Module":
        self.training = False
        for _, child in self.children():
            child.eval()
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: array.copy() for name, array in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = dict(self.named_parameters())
        buffer_owners = dict(self._buffer_owners())
        missing = [k for k in list(params) + list(buffer_owners) if k not in state]
        unexpected = [k for k in state if k not in params and k not in buffer_owners]
        if strict and (missing or unexpected):
            raise ContractError(f"State mismatch: missing={missing} unexpected={unexpected}")
        for name, value in state.items():
            if name in params:
                params[name].assign(value)
            elif name in buffer_owners:
                owner, local = buffer_owners[name]
                owner.load_buffer(local, np.asarray(value, dtype=DTYPE))

    def _buffer_owners(self, prefix: str = "") -> Iterator[tuple[str, tuple["Module", str]]]:
        for name in self.buffers():
            yield prefix + name, (self, name)
        for name, child in self.children():
            yield from child._buffer_owners(f"{prefix}{name}.")


class Dense(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = Parameter(glorot_uniform(rng, (in_dim, out_dim), in_dim, out_dim), "weight")
        self.bias = Parameter(np.zeros(out_dim), "bias")

    def forward(self, x: Tensor) -> Tensor:
        return forward_dense(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, stride: int, rng: np.random.Generator):
        if kernel_size < 1 or stride < 1:
            raise ConfigurationError(f"Kernel size and stride must be positive, got {kernel_size}, {stride}")
        self.stride = stride
        self.kernel_size = kernel_size
        area = kernel_size * kernel_size
        self.weight = Parameter(
            glorot_uniform(
                rng,
                (out_channels, in_channels, kernel_size, kernel_size),
                in_channels * area,
                out_channels * area,
            ),
            "weight",
        )
        self.bias = Parameter(np.zeros(out_channels), "bias")

    def forward(self, x: Tensor) -> Tensor:
        return forward_conv2d(x, self.weight, self.bias, self.stride)

    def output_size(self, size: int) -> int:
        return (size - self.kernel_size) // self.stride + 1


class BatchNorm1d(Module):
    def __init__(self, features: int, eps: float = 1e-5, momentum: float = 0.1):
        if eps <= 0:
            raise ConfigurationError(f"Batch-norm epsilon must be positive, got {eps}")
        if not 0.0 < momentum < 1.0:
            raise ConfigurationError(f"Batch-norm momentum must lie in (0, 1), got {momentum}")
        self.eps = eps
        self.scale = Parameter(np.ones(features), "scale")
        self.shift = Parameter(np.zeros(features), "shift")
        self.running = RunningMoments(np.zeros(features), np.ones(features), momentum)

    def forward(self, x: Tensor) -> Tensor:
        return forward_batchnorm(x, self.scale, self.shift, self.eps, self.mode, self.running)

    def buffers(self) -> dict[str, np.ndarray]:
        return {"running_mean": self.running.mean, "running_var": self.running.var}

    def load_buffer(self, name: str, value: np.ndarray) -> None:
        if name == "running_mean":
            self.running.mean = value.copy()
        elif name == "running_var":
            self.running.var = value.copy()
        else:
            raise KeyError(name)


class ReLU(Module):
    def forward(self, x: Tensor) -> Tensor:
        return forward_activation_relu(x)


class Dropout(Module):
    def __init__(self, p: float, rng: np.random.Generator):
        if not 0.0 <= p < 1.0:
            raise ConfigurationError(f"Dropout rate must lie in [0, 1), got {p}")
        self.p = p
        self.rng = rng

    def forward(self, x: Tensor) -> Tensor:
        return forward_dropout(x, self.p, self.mode, self.rng)


class GlobalAvgPool2d(Module):
    def forward(self, x: Tensor) -> Tensor:
        return forward_global_avg_pool(x)


class Sequential(Module):
    def __init__(self, *layers: Module):
        self.layers = list(layers)

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def __len__(self) -> int:
        return len(self.layers)


# --------------------------------------------------------------------------
# Declarative layer configuration
# --------------------------------------------------------------------------
LAYER_KINDS = ("dense", "conv2d", "batchnorm", "relu", "dropout", "global_avg_pool")


@dataclass(frozen=True)
class LayerConfig:
    kind: str
    in_dim: int = 0
    out_dim: int = 0
    kernel_size: int = 1
    stride: int = 1
    p: float = 0.0
    eps: float = 1e-5
    momentum: float = 0.1

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigurationError(f"Unknown layer kind {self.kind!r}; expected one of {LAYER_KINDS}")
        if not 0.0 <= self.p < 1.0:
            raise ConfigurationError(f"Dropout rate must lie in [0, 1), got {self.p}")
        if self.kernel_size < 1 or self.stride < 1:
            raise ConfigurationError("Kernel size and stride must be positive")
        if self.eps <= 0:
            raise ConfigurationError("Batch-norm epsilon must be positive")
        if not 0.0 < self.momentum < 1.0:
            raise ConfigurationError("Batch-norm momentum must lie in (0, 1)")


def build_layer(cfg: LayerConfig, rng: np.random.Generator) -> Module:
    if cfg.kind == "dense":
        return Dense(cfg.in_dim, cfg.out_dim, rng)
    if cfg.kind == "conv2d":
        return Conv2d(cfg.in_dim, cfg.out_dim, cfg.kernel_size, cfg.stride, rng)
    if cfg.kind == "batchnorm":
        return BatchNorm1d(cfg.out_dim or cfg.in_dim, cfg.eps, cfg.momentum)
    if cfg.kind == "relu":
        return ReLU()
    if cfg.kind == "dropout":
        return Dropout(cfg.p, rng)
    return GlobalAvgPool2d()
