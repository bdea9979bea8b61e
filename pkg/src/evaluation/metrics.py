from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from common.errors import ConfigurationError, ContractError, DimensionError, UndefinedMetricError

DEFAULT_BAND: tuple[float, float] = (-0.05, 0.05)
HISTOGRAM_RANGE: tuple[float, float] = (-0.2, 0.2)
HISTOGRAM_BIN_WIDTH = 0.01


def paired_arrays(predictions: Sequence[float], targets: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise DimensionError(f"{len(p)} predictions for {len(t)} targets")
    if p.size == 0:
        raise ContractError("Metrics need at least one (prediction, target) pair")
    return p, t


def mae(predictions: Sequence[float], targets: Sequence[float]) -> float:
    p, t = paired_arrays(predictions, targets)
    return float(np.mean(np.abs(p - t)))


def mape(predictions: Sequence[float], targets: Sequence[float]) -> float:
    """Mean absolute percentage error, in percent."""
    p, t = paired_arrays(predictions, targets)
    zeros = np.flatnonzero(t == 0)
    if zeros.size:
        raise UndefinedMetricError(f"MAPE is undefined: target at index {int(zeros[0])} is zero")
    return float(100.0 * np.mean(np.abs(p - t) / np.abs(t)))


@dataclass(frozen=True)
class ResidualHistogram:
    edges: np.ndarray
    counts: np.ndarray

    def to_dict(self) -> dict:
        return {"edges": [float(e) for e in self.edges], "counts": [int(c) for c in self.counts]}


@dataclass(frozen=True)
class ResidualBandResult:
    band: tuple[float, float]
    fraction: float
    residuals: np.ndarray
    histogram: ResidualHistogram


def residual_histogram(residuals: np.ndarray) -> ResidualHistogram:
    """Fixed 0.01-wide bins over [-0.2, 0.2]; residuals beyond land in the edge bins."""
    lo, hi = HISTOGRAM_RANGE
    n_bins = int(round((hi - lo) / HISTOGRAM_BIN_WIDTH))
    edges = np.linspace(lo, hi, n_bins + 1)
    counts, _ = np.histogram(np.clip(residuals, lo, hi), bins=edges)
    return ResidualHistogram(edges, counts)


def residual_band_analysis(
    predictions: Sequence[float],
    targets: Sequence[float],
    band: tuple[float, float] = DEFAULT_BAND,
) -> ResidualBandResult:
    """Share of residuals (prediction - target) inside the closed band."""
    lo, hi = band
    if not lo < hi:
        raise ConfigurationError(f"Residual band needs lo < hi, got {band}")
    p, t = paired_arrays(predictions, targets)
    residuals = p - t
    inside = (residuals >= lo) & (residuals <= hi)
    return ResidualBandResult((lo, hi), float(inside.mean()), residuals, residual_histogram(residuals))
