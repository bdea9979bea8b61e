from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator, Literal, Sequence

import numpy as np
import pandas as pd

from common.errors import ContractError, DimensionError

Normalization = Literal["raw", "zscored"]

# Meteorological variables in their canonical (table) order
METEO_VARIABLES: tuple[str, ...] = (
    "T_air", "T_mod", "T_hs", "RH", "RH_mod", "P", "Phi_solar", "P_vapor", "P_bar",
    "v_wind", "v_gust", "v_north", "v_east", "theta_wind", "Tilt_NS", "Tilt_WE",
)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    names: tuple[str, ...]
    normalization: Normalization = "raw"

    def __post_init__(self):
        if len(self.values) != len(self.names):
            raise DimensionError(f"Feature vector has {len(self.values)} values for {len(self.names)} names")


@dataclass(frozen=True)
class Sample:
    patch: np.ndarray
    features: FeatureVector
    target_vwc: float
    station_id: str
    timestamp: str
    sample_id: str = ""


@dataclass(frozen=True)
class ModelBatch:
    """Mini-batch in model layout: patches [B, 3, H, W], features [B, k]."""

    patches: np.ndarray
    features: np.ndarray
    targets: np.ndarray | None = None
    station_ids: np.ndarray | None = None

    def __len__(self) -> int:
        return int(self.features.shape[0])


@dataclass
class SampleSet:
    """Columnar collection of paired (patch, meteo features, vwc) samples.

    patches: [N, H, W, 3] in [0, 1]; features: [N, k] named by feature_names.
    """

    patches: np.ndarray
    features: np.ndarray
    feature_names: tuple[str, ...]
    targets: np.ndarray
    station_ids: np.ndarray
    timestamps: np.ndarray
    sample_ids: np.ndarray
    normalization: Normalization = "raw"
    normalizer_fingerprint: str | None = None
    extras: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.patches = np.asarray(self.patches, dtype=np.float64)
        self.feature_names = tuple(self.feature_names)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.size == 0:
            self.features = self.features.reshape(len(self.features), len(self.feature_names))
        self.targets = np.asarray(self.targets, dtype=np.float64)
        self.station_ids = np.asarray(self.station_ids, dtype=object)
        self.timestamps = np.asarray(self.timestamps, dtype=object)
        self.sample_ids = np.asarray(self.sample_ids, dtype=object)
        n = len(self.targets)
        lengths = {
            "patches": len(self.patches), "features": len(self.features),
            "station_ids": len(self.station_ids), "timestamps": len(self.timestamps),
            "sample_ids": len(self.sample_ids),
        }
        bad = {k: v for k, v in lengths.items() if v != n}
        if bad:
            raise DimensionError(f"SampleSet columns disagree with {n} targets: {bad}")
        if self.features.shape[1] != len(self.feature_names):
            raise DimensionError(
                f"Feature matrix has {self.features.shape[1]} columns for {len(self.feature_names)} names"
            )
        if n and self.patches.ndim != 4:
            raise DimensionError(f"Patches must be [N, H, W, 3], got shape {self.patches.shape}")
        if n and ((self.targets <= 0).any() or (self.targets >= 1).any()):
            raise ContractError("Target vwc must lie in (0, 1)")
        if n and (self.patches.min() < 0 or self.patches.max() > 1):
            raise ContractError("Patch pixel values must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.targets)

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i: int) -> Sample:
        return Sample(
            patch=self.patches[i],
            features=FeatureVector(self.features[i], self.feature_names, self.normalization),
            target_vwc=float(self.targets[i]),
            station_id=str(self.station_ids[i]),
            timestamp=str(self.timestamps[i]),
            sample_id=str(self.sample_ids[i]),
        )

    @property
    def patch_shape(self) -> tuple[int, int]:
        return int(self.patches.shape[1]), int(self.patches.shape[2])

    @property
    def stations(self) -> list[str]:
        return sorted(set(self.station_ids.tolist()))

    def subset(self, indices: Sequence[int] | np.ndarray) -> "SampleSet":
        idx = np.asarray(indices, dtype=np.int64)
        return replace(
            self,
            patches=self.patches[idx],
            features=self.features[idx],
            targets=self.targets[idx],
            station_ids=self.station_ids[idx],
            timestamps=self.timestamps[idx],
            sample_ids=self.sample_ids[idx],
            extras={k: v[idx] for k, v in self.extras.items()},
        )

    def by_station(self) -> dict[str, "SampleSet"]:
        return {s: self.subset(np.flatnonzero(self.station_ids == s)) for s in self.stations}

    def select_features(self, names: Sequence[str]) -> "SampleSet":
        missing = [n for n in names if n not in self.feature_names]
        if missing:
            raise DimensionError(f"Features not available in sample set: {missing}")
        cols = [self.feature_names.index(n) for n in names]
        return replace(self, features=self.features[:, cols], feature_names=tuple(names))

    def with_features(
        self,
        features: np.ndarray,
        normalization: Normalization,
        fingerprint: str | None = None,
    ) -> "SampleSet":
        return replace(self, features=features, normalization=normalization, normalizer_fingerprint=fingerprint)

    def batch(self, indices: Sequence[int] | np.ndarray) -> ModelBatch:
        idx = np.asarray(indices, dtype=np.int64)
        return ModelBatch(
            patches=np.ascontiguousarray(self.patches[idx].transpose(0, 3, 1, 2)),
            features=self.features[idx],
            targets=self.targets[idx],
            station_ids=self.station_ids[idx],
        )

    def full_batch(self) -> ModelBatch:
        return self.batch(np.arange(len(self)))

    def to_frame(self) -> pd.DataFrame:
        """Tabular view: ids, timestamp, features and vwc (patches excluded)."""
        df = pd.DataFrame(self.features, columns=list(self.feature_names))
        df.insert(0, "timestamp", self.timestamps)
        df.insert(0, "station_id", self.station_ids)
        df.insert(0, "sample_id", self.sample_ids)
        df["vwc"] = self.targets
        return df

    @classmethod
    def concat(cls, parts: Sequence["SampleSet"]) -> "SampleSet":
        if not parts:
            raise ContractError("Cannot concatenate an empty list of sample sets")
        first = parts[0]
        if any(p.feature_names != first.feature_names for p in parts):
            raise DimensionError("Sample sets carry different feature lists")
        keys = set(first.extras)
        return cls(
            patches=np.concatenate([p.patches for p in parts]),
            features=np.concatenate([p.features for p in parts]),
            feature_names=first.feature_names,
            targets=np.concatenate([p.targets for p in parts]),
            station_ids=np.concatenate([p.station_ids for p in parts]),
            timestamps=np.concatenate([p.timestamps for p in parts]),
            sample_ids=np.concatenate([p.sample_ids for p in parts]),
            normalization=first.normalization,
            normalizer_fingerprint=first.normalizer_fingerprint,
            extras={k: np.concatenate([p.extras[k] for p in parts]) for k in keys if all(k in p.extras for p in parts)},
        )
