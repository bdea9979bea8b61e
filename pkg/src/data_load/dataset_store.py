from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from common.errors import DataPreparationError, MissingInputError, SchemaError
from common.run_logging import get_logger
from data_clean.feature_selection import correlation_matrix, resolve_feature_spec, select_features
from data_clean.normalization import NormalizerStats, fit_normalizer, normalize_sample_set
from data_clean.splitting import DEFAULT_RATIOS, SPLIT_NAMES, DatasetSplits, split_dataset
from data_load.samples import SampleSet
from patch_tools.image_io import read_image, write_png

logger = get_logger("misme.store")

FLOAT_FORMAT = "%.17g"
ID_DTYPES = {"sample_id": str, "station_id": str, "timestamp": str}


@dataclass(frozen=True)
class PreparedDataset:
    samples: SampleSet
    splits: DatasetSplits
    features: tuple[str, ...]
    stats: NormalizerStats
    selection_report: pd.DataFrame | None = None


def prepare_dataset(
    samples: SampleSet,
    feature_spec: str | Sequence[str] | None = "paper-default",
    ratios: Sequence[float] = DEFAULT_RATIOS,
    seed: int = 42,
    stratify_by_station: bool = True,
    min_abs_r: float = 0.08,
    redundancy_r: float = 0.9,
) -> PreparedDataset:
    """Split raw samples, settle the feature list and fit the normalizer on train only."""
    splits = split_dataset(samples, ratios, seed, stratify_by_station)
    names = resolve_feature_spec(feature_spec)
    report = None
    if names is None:
        selection = select_features(splits.train.to_frame(), "vwc", min_abs_r, redundancy_r)
        names, report = selection.features, selection.report
        if not names:
            raise DataPreparationError("Correlation screening kept no features; lower features.min_abs_r")
    stats = fit_normalizer(splits.train.select_features(names))
    return PreparedDataset(samples, splits, tuple(names), stats, report)


class DatasetStore:
    """On-disk dataset layout shared by ``prepare`` and ``synth``.

    patches/<sample_id>.png     8-bit RGB patches
    patch_index.csv             patch path, source image, box, station, timestamp, vwc
    meteo_features.csv          raw meteo variables per sample
    features_normalized.csv     z-scored selected features per sample and split
    normalizer_stats.csv        feature, mean, std (training split)
    feature_selection.csv       correlation screening report (auto selection only)
    correlation_matrix.csv      Pearson r between every meteo variable and vwc (training split)
    splits/{train,val,test}.csv split manifests
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.patches_dir = self.root / "patches"
        self.patch_index = self.root / "patch_index.csv"
        self.meteo_features = self.root / "meteo_features.csv"
        self.features_normalized = self.root / "features_normalized.csv"
        self.normalizer_stats = self.root / "normalizer_stats.csv"
        self.feature_selection = self.root / "feature_selection.csv"
        self.correlations = self.root / "correlation_matrix.csv"
        self.splits_dir = self.root / "splits"

    def split_path(self, name: str) -> Path:
        return self.splits_dir / f"{name}.csv"

    # -- writing ---------------------------------------------------------
    def write(self, prepared: PreparedDataset) -> list[tuple[Path, int]]:
        """Write every layout file; returns (path, rows) per artifact."""
        self.root.mkdir(parents=True, exist_ok=True)
        samples = prepared.samples
        artifacts: list[tuple[Path, int]] = []

        index = self.patch_index_frame(samples)
        for sid, patch in zip(samples.sample_ids, samples.patches):
            write_png(patch, self.patches_dir / f"{sid}.png")
        index.to_csv(self.patch_index, index=False, float_format=FLOAT_FORMAT)
        artifacts.append((self.patch_index, len(index)))

        meteo = samples.to_frame()
        meteo.to_csv(self.meteo_features, index=False, float_format=FLOAT_FORMAT)
        artifacts.append((self.meteo_features, len(meteo)))

        self.splits_dir.mkdir(parents=True, exist_ok=True)
        normalized = []
        for name, split in prepared.splits.items():
            manifest = split.to_frame()[["sample_id", "station_id", "timestamp", "vwc"]]
            manifest.to_csv(self.split_path(name), index=False, float_format=FLOAT_FORMAT)
            artifacts.append((self.split_path(name), len(manifest)))
            z = normalize_sample_set(prepared.stats, split.select_features(prepared.features))
            frame = pd.DataFrame(z.features, columns=list(prepared.features))
            frame.insert(0, "split", name)
            frame.insert(0, "sample_id", z.sample_ids)
            normalized.append(frame)
        normalized_frame = pd.concat(normalized, ignore_index=True)
        normalized_frame.to_csv(self.features_normalized, index=False, float_format=FLOAT_FORMAT)
        artifacts.append((self.features_normalized, len(normalized_frame)))

        prepared.stats.to_csv(self.normalizer_stats)
        artifacts.append((self.normalizer_stats, len(prepared.features)))
        if prepared.selection_report is not None:
            prepared.selection_report.to_csv(self.feature_selection, index=False, float_format=FLOAT_FORMAT)
            artifacts.append((self.feature_selection, len(prepared.selection_report)))

        train = prepared.splits.train
        if len(train) >= 2:
            matrix = correlation_matrix(train.to_frame(), [*train.feature_names, "vwc"])
            matrix.to_csv(self.correlations, index_label="variable", float_format=FLOAT_FORMAT)
            artifacts.append((self.correlations, len(matrix)))
        logger.info("Wrote dataset with %d samples to %s", len(samples), self.root)
        return artifacts

    def patch_index_frame(self, samples: SampleSet) -> pd.DataFrame:
        n = len(samples)
        h, w = samples.patch_shape
        extras = samples.extras
        return pd.DataFrame({
            "sample_id": samples.sample_ids,
            "patch_path": [f"patches/{sid}.png" for sid in samples.sample_ids],
            "source_image": extras.get("source_image", np.full(n, "synthetic", dtype=object)),
            "x_min": extras.get("x_min", np.zeros(n)),
            "y_min": extras.get("y_min", np.zeros(n)),
            "x_max": extras.get("x_max", np.full(n, float(w))),
            "y_max": extras.get("y_max", np.full(n, float(h))),
            "confidence": extras.get("confidence", np.ones(n)),
            "station_id": samples.station_ids,
            "timestamp": samples.timestamps,
            "vwc": samples.targets,
        })

    # -- reading ---------------------------------------------------------
    def require(self, *paths: Path) -> None:
        missing = [str(p) for p in paths if not p.exists()]
        if missing:
            raise MissingInputError(f"Dataset files missing under {self.root}: {missing}")

    def normalizer(self) -> NormalizerStats:
        return NormalizerStats.from_csv(self.normalizer_stats)

    def load_split(self, name: str, features: Sequence[str] | None = None) -> SampleSet:
        if name not in SPLIT_NAMES:
            raise SchemaError(f"Unknown split {name!r}; expected one of {SPLIT_NAMES}")
        return self.load_manifest(self.split_path(name), features)

    def load_splits(self, features: Sequence[str] | None = None) -> DatasetSplits:
        return DatasetSplits(*(self.load_split(name, features) for name in SPLIT_NAMES))

    def load_manifest(self, manifest_path: str | Path, features: Sequence[str] | None = None) -> SampleSet:
        """Raw sample set for the ids in a split manifest, restricted to the stored feature list."""
        manifest_path = Path(manifest_path)
        self.require(manifest_path, self.patch_index, self.meteo_features, self.normalizer_stats)
        manifest = pd.read_csv(manifest_path, dtype=ID_DTYPES, float_precision="round_trip")
        missing_cols = [c for c in ("sample_id", "station_id", "timestamp", "vwc") if c not in manifest.columns]
        if missing_cols:
            raise SchemaError(f"{manifest_path} lacks columns {missing_cols}")
        if manifest.empty:
            raise DataPreparationError(f"Manifest {manifest_path} lists no samples")
        names = tuple(features) if features else self.normalizer().features

        meteo = pd.read_csv(self.meteo_features, dtype=ID_DTYPES, float_precision="round_trip").set_index("sample_id")
        index = pd.read_csv(self.patch_index, dtype=ID_DTYPES, float_precision="round_trip").set_index("sample_id")
        ids = manifest["sample_id"].tolist()
        unknown = [s for s in ids if s not in meteo.index or s not in index.index]
        if unknown:
            raise SchemaError(f"{len(unknown)} manifest ids not found in the dataset, e.g. {unknown[:3]}")
        absent = [c for c in names if c not in meteo.columns]
        if absent:
            raise SchemaError(f"meteo_features.csv lacks features {absent}")

        patches = np.stack([read_image(self.root / index.at[sid, "patch_path"]) for sid in ids])
        return SampleSet(
            patches=patches,
            features=meteo.loc[ids, list(names)].to_numpy(dtype=np.float64),
            feature_names=names,
            targets=manifest["vwc"].to_numpy(dtype=np.float64),
            station_ids=manifest["station_id"].to_numpy(dtype=object),
            timestamps=manifest["timestamp"].to_numpy(dtype=object),
            sample_ids=np.asarray(ids, dtype=object),
        )

