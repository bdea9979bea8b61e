import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import yaml

from common.config import RunConfig
from data_generate.station_profiles import SignalCoupling, load_profiles
from data_generate.synthetic_generator import generate_synthetic_dataset
from data_load.samples import SampleSet
from models.configs import FusionConfig, ImageExtractorConfig, MSMEConfig
from patch_tools.image_io import write_png

TINY_FEATURES = ("f0", "f1", "f2", "f3")


def tiny_fusion_config(variant: str = "concat", **changes) -> FusionConfig:
    """8x8 patches, n=8 image features, k=4 meteo inputs, m=4, no dropout."""
    values = dict(
        variant=variant,
        image=ImageExtractorConfig(stages=((4, 3, 2), (8, 3, 1)), feature_dim=8, input_size=8),
        msme=MSMEConfig(input_dim=4, hidden=(8,), output_dim=4, dropout=0.0),
        fusion_hidden=(4,),
        projection_hidden=4,
        projection_dropout=0.0,
    )
    values.update(changes)
    return FusionConfig(**values)


def random_sample_set(n: int = 12, seed: int = 0, size: int = 8, stations=("S1", "S2", "S3")) -> SampleSet:
    rng = np.random.default_rng(seed)
    return SampleSet(
        patches=rng.uniform(0.0, 1.0, size=(n, size, size, 3)),
        features=rng.normal(size=(n, len(TINY_FEATURES))),
        feature_names=TINY_FEATURES,
        targets=rng.uniform(0.15, 0.4, size=n),
        station_ids=np.array([stations[i % len(stations)] for i in range(n)], dtype=object),
        timestamps=np.array([f"2023-06-01T{i % 24:02d}:00:00" for i in range(n)], dtype=object),
        sample_ids=np.array([f"s{i:03d}" for i in range(n)], dtype=object),
    )


@pytest.fixture(scope="session")
def tiny_config():
    return tiny_fusion_config


@pytest.fixture(scope="session")
def make_samples():
    return random_sample_set


@pytest.fixture
def tiny_samples() -> SampleSet:
    return random_sample_set()


@pytest.fixture(scope="session")
def default_config() -> RunConfig:
    return RunConfig.load()


@pytest.fixture(scope="session")
def station_profiles(default_config):
    return load_profiles(None, default_config)


@pytest.fixture(scope="session")
def small_synthetic(station_profiles) -> SampleSet:
    return generate_synthetic_dataset(station_profiles, 40, seed=7, coupling=SignalCoupling(), patch_size=8)


@pytest.fixture
def cli_config(tmp_path: Path) -> Path:
    """Config that keeps logs, audit db and outputs inside tmp_path and trains a tiny model fast."""
    values = {
        "paths": {"out_dir": str(tmp_path / "run"), "dataset_dir": str(tmp_path / "dataset")},
        "logging": {"log_dir": str(tmp_path / "logs")},
        "audit": {"db_path": str(tmp_path / "db" / "runs.db")},
        "data": {"n_per_station": 20, "patch_size": 8},
        "model": {
            "image_extractor": {"stages": [[4, 3, 2], [4, 3, 1]], "feature_dim": 4},
            "msme": {"hidden": [8], "output_dim": 4, "dropout": 0.0},
            "fusion_hidden": [4],
            "projection_hidden": 4,
            "projection_dropout": 0.0,
        },
        "training": {"epochs": 3, "batch_size": 8, "lr": 0.01, "patience": 0},
        "experiments": {
            "coefficient_grid": [[1.0, 1.0, 1.0]],
            "coefficient_simplex_step": None,
        },
    }
    path = tmp_path / "test_config.yaml"
    path.write_text(yaml.safe_dump(values), encoding="utf-8")
    return path


@pytest.fixture
def meteo_frame(small_synthetic) -> pd.DataFrame:
    return small_synthetic.to_frame().drop(columns=["sample_id"])


@pytest.fixture
def labelled_images(tmp_path: Path, meteo_frame) -> tuple[Path, Path]:
    """Ten 16x16 images across two stations, each with a confident and an alternating-confidence box.

    Returns (manifest path, meteo csv path).
    """
    rows = pd.concat([meteo_frame.iloc[0:5], meteo_frame.iloc[40:45]], ignore_index=True)
    rng = np.random.default_rng(3)
    lines = []
    for i, row in rows.iterrows():
        write_png(rng.uniform(size=(16, 16, 3)), tmp_path / "images" / f"img{i}.png")
        lines.append(json.dumps({
            "image": f"images/img{i}.png",
            "station_id": row["station_id"],
            "timestamp": row["timestamp"],
            "vwc": float(row["vwc"]),
            "boxes": [
                {"x_min": 0, "y_min": 0, "x_max": 8, "y_max": 8, "confidence": 0.9},
                {"x_min": 4, "y_min": 4, "x_max": 12, "y_max": 10, "confidence": 0.3 if i % 2 else 0.7},
            ],
        }))
    manifest = tmp_path / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    meteo = tmp_path / "meteo.csv"
    rows.to_csv(meteo, index=False, float_format="%.17g")
    return manifest, meteo
