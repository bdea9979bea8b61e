from __future__ import annotations

import numpy as np

from common.errors import DimensionError
from models.configs import ImageExtractorConfig, MSMEConfig
from nn_core.layers import (
    BatchNorm1d,
    Conv2d,
    Dense,
    Dropout,
    GlobalAvgPool2d,
    Module,
    ReLU,
    Sequential,
)
from nn_core.tensor import Tensor


class ImageFeatureExtractor(Module):
    """[B, 3, H, W] patches -> conv/ReLU stages -> global average pool -> [B, n]."""

    def __init__(self, cfg: ImageExtractorConfig, rng: np.random.Generator):
        self.cfg = cfg
        layers: list[Module] = []
        in_channels = cfg.in_channels
        for out_channels, kernel, stride in cfg.stages:
            layers += [Conv2d(in_channels, out_channels, kernel, stride, rng), ReLU()]
            in_channels = out_channels
        layers.append(GlobalAvgPool2d())
        self.body = Sequential(*layers)

    def forward(self, x: Tensor) -> Tensor:
        expected = (self.cfg.in_channels, self.cfg.input_size, self.cfg.input_size)
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise DimensionError(f"Image extractor expects [B, {', '.join(map(str, expected))}], got {x.shape}")
        return self.body(x)


class MSMEExtractor(Module):
    """Stacked dense blocks over the meteorological feature vector: [B, k] -> [B, m]."""

    def __init__(self, cfg: MSMEConfig, rng: np.random.Generator):
        self.cfg = cfg
        layers: list[Module] = []
        width = cfg.input_dim
        for out in (*cfg.hidden, cfg.output_dim):
            layers.append(Dense(width, out, rng))
            if cfg.batchnorm:
                layers.append(BatchNorm1d(out))
            layers.append(ReLU())
            if cfg.dropout > 0:
                layers.append(Dropout(cfg.dropout, rng))
            width = out
        self.body = Sequential(*layers)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.cfg.input_dim:
            raise DimensionError(f"MSME expects [B, {self.cfg.input_dim}] features, got {x.shape}")
        return self.body(x)


class UnimodalHead(Module):
    """Linear regression from a feature vector to one vwc value per sample."""

    def __init__(self, in_dim: int, rng: np.random.Generator):
        self.in_dim = in_dim
        self.linear = Dense(in_dim, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionError(f"Head expects [B, {self.in_dim}], got {x.shape}")
        return self.linear(x).reshape(x.shape[0])


class ProjectionHead(Module):
    """Maps image features to the meteo width for add/multiply fusion.

    dense -> batch-norm -> ReLU -> dropout -> dense -> batch-norm -> ReLU
    """

    def __init__(self, in_dim: int, hidden: int, out_dim: int, dropout: float, rng: np.random.Generator):
        layers: list[Module] = [Dense(in_dim, hidden, rng), BatchNorm1d(hidden), ReLU()]
        if dropout > 0:
            layers.append(Dropout(dropout, rng))
        layers += [Dense(hidden, out_dim, rng), BatchNorm1d(out_dim), ReLU()]
        self.body = Sequential(*layers)

    def forward(self, x: Tensor) -> Tensor:
        return self.body(x)
