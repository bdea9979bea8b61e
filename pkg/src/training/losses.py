from __future__ import annotations

from dataclasses import dataclass

from common.errors import ConfigurationError, ContractError, DimensionError
from models.fusion import HybridOutputs
from nn_core.tensor import Tensor, lift

LOSS_KINDS = ("mse", "mae")


@dataclass(frozen=True)
class HybridCoefficients:
    """Weights of the combined, meteo and image loss terms."""

    delta: float = 1.0
    gamma: float = 1.0
    lam: float = 1.0

    def __post_init__(self):
        if min(self.delta, self.gamma, self.lam) < 0:
            raise ConfigurationError(f"Hybrid coefficients must be non-negative, got {self.as_tuple()}")
        if self.delta + self.gamma + self.lam <= 0:
            raise ConfigurationError("At least one hybrid coefficient must be positive")

    def as_tuple(self) -> tuple[float, float, float]:
        return self.delta, self.gamma, self.lam


@dataclass(frozen=True)
class HybridLossTerms:
    total: float
    concat: float
    meteo: float
    image: float


def base_loss(predictions: Tensor, targets, kind: str = "mse") -> Tensor:
    targets = lift(targets)
    if predictions.shape != targets.shape:
        raise DimensionError(f"Predictions {predictions.shape} and targets {targets.shape} differ in shape")
    if predictions.size == 0:
        raise ContractError("Loss of an empty batch is undefined")
    diff = predictions - targets
    if kind == "mse":
        return diff.square().mean()
    if kind == "mae":
        return diff.abs().mean()
    raise ConfigurationError(f"Unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


def hybrid_loss(
    outputs: HybridOutputs,
    targets,
    coeffs: HybridCoefficients,
    kind: str = "mse",
) -> tuple[Tensor, HybridLossTerms]:
    """delta * L(cO) + gamma * L(mO) + lam * L(iO), with the unweighted terms."""
    l_concat = base_loss(outputs.combined, targets, kind)
    l_meteo = base_loss(outputs.meteo, targets, kind)
    l_image = base_loss(outputs.image, targets, kind)
    total = l_concat * coeffs.delta + l_meteo * coeffs.gamma + l_image * coeffs.lam
    return total, HybridLossTerms(total.item(), l_concat.item(), l_meteo.item(), l_image.item())
