from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from common.errors import ConfigurationError, ContractError, DimensionError, MissingInputError, SchemaError
from data_load.samples import FeatureVector, SampleSet


@dataclass(frozen=True)
class NormalizerStats:
    """Per-feature z-score statistics (population std) from the training split."""

    features: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if not (len(self.features) == len(self.mean) == len(self.std)):
            raise DimensionError("Normalizer names, means and stds differ in length")
        for name, s in zip(self.features, self.std):
            if not s > 0:
                raise ConfigurationError(f"Feature {name} has zero standard deviation on the training split")

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update("\x1f".join(self.features).encode("utf-8"))
        h.update(np.ascontiguousarray(self.mean, dtype=np.float64).tobytes())
        h.update(np.ascontiguousarray(self.std, dtype=np.float64).tobytes())
        return h.hexdigest()

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"feature": list(self.features), "mean": self.mean, "std": self.std})

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        return path

    @classmethod
    def from_csv(cls, path: str | Path) -> "NormalizerStats":
        path = Path(path)
        if not path.exists():
            raise MissingInputError(f"Normalizer stats not found: {path}")
        df = pd.read_csv(path, float_precision="round_trip")
        if list(df.columns) != ["feature", "mean", "std"]:
            raise SchemaError(f"{path}: expected columns feature, mean, std; got {list(df.columns)}")
        return cls(tuple(df["feature"].astype(str)), df["mean"].to_numpy(np.float64), df["std"].to_numpy(np.float64))


def fit_normalizer(train: SampleSet | np.ndarray, features: Sequence[str] | None = None) -> NormalizerStats:
    """Fit on the training split only; ``features`` names the columns of a bare matrix."""
    if isinstance(train, SampleSet):
        if train.normalization != "raw":
            raise ContractError("Normalizer must be fit on raw features")
        values, names = train.features, train.feature_names
    else:
        values, names = np.asarray(train, dtype=np.float64), tuple(features or ())
        if values.ndim == 1:
            values = values[:, None]
    if len(values) == 0:
        raise ContractError("Cannot fit a normalizer on an empty training split")
    if values.shape[1] != len(names):
        raise DimensionError(f"{values.shape[1]} feature columns for {len(names)} names")
    return NormalizerStats(tuple(names), values.mean(axis=0), values.std(axis=0, ddof=0))


def apply_normalizer(stats: NormalizerStats, features: np.ndarray | FeatureVector) -> np.ndarray | FeatureVector:
    if isinstance(features, FeatureVector):
        if features.names != stats.features:
            raise DimensionError(f"Feature vector {features.names} does not match normalizer {stats.features}")
        return FeatureVector((features.values - stats.mean) / stats.std, features.names, "zscored")
    values = np.asarray(features, dtype=np.float64)
    if values.shape[-1] != len(stats.features):
        raise DimensionError(f"Expected {len(stats.features)} features, got {values.shape[-1]}")
    return (values - stats.mean) / stats.std


def normalize_sample_set(stats: NormalizerStats, samples: SampleSet) -> SampleSet:
    """Z-score a raw sample set; an already normalized set must carry this stats fingerprint."""
    fingerprint = stats.fingerprint()
    if samples.normalization == "zscored":
        if samples.normalizer_fingerprint != fingerprint:
            raise ContractError("Sample set was normalized with different statistics")
        return samples
    if samples.feature_names != stats.features:
        raise DimensionError(f"Sample features {samples.feature_names} do not match normalizer {stats.features}")
    return samples.with_features(apply_normalizer(stats, samples.features), "zscored", fingerprint)
