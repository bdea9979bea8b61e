"""End-to-end training on synthetic stations; run with ``pytest -m slow``."""
import numpy as np
import pytest

from data_clean.feature_selection import FEATURE_PRESETS
from data_clean.splitting import split_dataset
from data_generate.station_profiles import SignalCoupling, StationShift
from data_generate.synthetic_generator import generate_synthetic_dataset
from models.configs import FusionConfig, ImageExtractorConfig, MSMEConfig
from training.experiments import ExperimentData, run_cell, run_station_fraction_grid, run_variant_comparison
from training.trainer import TrainingConfig

pytestmark = pytest.mark.slow

FEATURES = FEATURE_PRESETS["paper-default"]
PATCH = 16
# 65% of 462 per station leaves 300 training samples at each of the three stations
PER_STATION = 462


def small_fusion(variant: str = "concat", **changes) -> FusionConfig:
    return FusionConfig(
        variant=variant,
        image=ImageExtractorConfig(stages=((8, 3, 2), (16, 3, 2)), feature_dim=16, input_size=PATCH),
        msme=MSMEConfig(input_dim=len(FEATURES), hidden=(32, 16), output_dim=8, dropout=0.1),
        fusion_hidden=(16,),
        projection_hidden=16,
        projection_dropout=0.1,
        **changes,
    )


def experiment_data(profiles, n_per_station, coupling, seed=42) -> ExperimentData:
    samples = generate_synthetic_dataset(profiles, n_per_station, seed, coupling, PATCH)
    return ExperimentData.from_splits(split_dataset(samples, seed=seed), FEATURES)


def test_fusion_beats_both_unimodal_baselines(station_profiles):
    data = experiment_data(station_profiles, PER_STATION, SignalCoupling())
    assert len(data.train) == 900
    training = TrainingConfig(epochs=80, batch_size=32, lr=3e-3, patience=15, seed=0)
    frame = run_variant_comparison(small_fusion(), training, data).set_index("variant")
    assert (frame["status"] == "ok").all()
    baseline = min(frame.loc["meteo_only", "test_mape"], frame.loc["image_only", "test_mape"])
    for variant in ("concat", "hybrid", "learnable_param"):
        assert frame.loc[variant, "test_mape"] <= 0.95 * baseline, frame[["test_mape"]]


DIRECTIONAL = TrainingConfig(epochs=60, batch_size=32, lr=1e-2, weight_decay=1e-2, patience=0, seed=0)


@pytest.mark.parametrize(
    "coupling, informative",
    [
        (SignalCoupling(meteo_signal=2.0, meteo_noise=0.2, image_signal=0.0, image_noise=1.0), "meteo"),
        (SignalCoupling(meteo_signal=0.0, meteo_noise=1.0, image_signal=1.5, image_noise=0.15,
                        texture_noise=0.02), "image"),
    ],
)
def test_learnable_weights_favour_the_informative_modality(station_profiles, coupling, informative):
    # one station, so the soil tint cannot stand in for a station mean
    profiles = {"Station1": station_profiles["Station1"]}
    data = experiment_data(profiles, 600, coupling)
    row = run_cell(small_fusion("learnable_param"), DIRECTIONAL, data)
    alpha, beta = row["alpha"], row["beta"]
    if informative == "meteo":
        assert alpha > 3 * abs(beta), (alpha, beta)
    else:
        assert beta > 3 * abs(alpha), (alpha, beta)


def test_target_station_data_lowers_its_error(station_profiles):
    shift = StationShift(image_offset=0.08, meteo_offset=1.5)
    by_target = {
        station: generate_synthetic_dataset(
            station_profiles, 200, 42, SignalCoupling().with_shift(station, shift), PATCH
        )
        for station in station_profiles
    }
    training = TrainingConfig(epochs=60, batch_size=32, lr=3e-3, patience=10, seed=0)
    frame = run_station_fraction_grid(small_fusion(), training, by_target, FEATURES, fractions=(0.0, 1.0), seed=1)
    assert (frame["status"] == "ok").all()
    for station, curve in frame.groupby("target_station"):
        mape = curve.set_index("fraction")["test_mape"]
        assert mape[1.0] < mape[0.0], (station, mape.to_dict())
    assert np.isfinite(frame["test_mae"]).all()
