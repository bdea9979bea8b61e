from __future__ import annotations

from typing import Mapping

import numpy as np
import pandas as pd
from faker import Faker

from common.errors import ConfigurationError
from common.run_logging import get_logger
from data_generate.station_profiles import SignalCoupling, StationProfile
from data_load.samples import METEO_VARIABLES, SampleSet

logger = get_logger("misme.synth")

# vwc is standardized against these before driving either modality
VWC_CENTER = 0.29
VWC_SCALE = 0.06

# sign and strength of each variable's dependence on standardized vwc
METEO_LOADINGS: dict[str, float] = {
    "RH": 0.6,
    "T_air": -0.5,
    "P_bar": 0.35,
    "Phi_solar": -0.3,
    "P": 0.3,
    "Tilt_WE": 0.25,
    "Tilt_NS": -0.2,
    "v_wind": -0.2,
}

BRIGHTNESS_BASE = 0.5
BRIGHTNESS_SLOPE = 0.1
SERIES_START = "2023-06-01"


def sample_truncated_normal(
    rng: np.random.Generator, mean: float, std: float, lo: float, hi: float, n: int
) -> np.ndarray:
    """Rejection-sample n draws of N(mean, std) restricted to [lo, hi]."""
    out = np.empty(0)
    while len(out) < n:
        draw = rng.normal(mean, std, size=max(2 * (n - len(out)), 16))
        out = np.concatenate([out, draw[(draw >= lo) & (draw <= hi)]])
    return out[:n]


class SyntheticDatasetGenerator:
    """
    Generates paired (soil patch, meteo features, vwc) samples per station.

    vwc        : truncated normal matching each profile's mean/std/range
    meteo      : the 16 table variables; a subset loads on standardized vwc
                 (RH positively, T_air negatively, ...), the rest is weather noise
    patches    : [H, W, 3] textured noise whose brightness falls affinely with
                 vwc, tinted by the station's soil texture
    timestamps : hourly series per station
    sample ids : seeded uuid4 values

    Station streams come from one SeedSequence spawned in sorted station
    order, so a seed fixes the whole dataset.
    """

    def __init__(
        self,
        profiles: Mapping[str, StationProfile],
        coupling: SignalCoupling | None = None,
        patch_size: int = 64,
        seed: int = 42,
    ):
        if not profiles:
            raise ConfigurationError("At least one station profile is required")
        if patch_size < 1:
            raise ConfigurationError(f"Patch size must be positive, got {patch_size}")
        self.profiles = dict(sorted(profiles.items()))
        self.coupling = coupling or SignalCoupling()
        self.patch_size = patch_size
        self.seed = seed
        self.fake = Faker()
        self.fake.seed_instance(seed)

    def standardized(self, vwc: np.ndarray) -> np.ndarray:
        return (vwc - VWC_CENTER) / VWC_SCALE

    def latent(self, name: str, z: np.ndarray, meteo_offset: float, rng: np.random.Generator) -> np.ndarray:
        w = METEO_LOADINGS.get(name, 0.0)
        c = self.coupling
        return c.meteo_signal * w * (z + meteo_offset) + c.meteo_noise * rng.standard_normal(len(z))

    def generate_meteo(
        self, profile: StationProfile, vwc: np.ndarray, rng: np.random.Generator
    ) -> pd.DataFrame:
        """Physical-unit meteo variables for one station."""
        n = len(vwc)
        z = self.standardized(vwc)
        offset = self.coupling.shift_for(profile.station_id).meteo_offset
        noise = self.coupling.meteo_noise

        t_air = 18.0 + 6.0 * self.latent("T_air", z, offset, rng)
        rh = np.clip(65.0 + 15.0 * self.latent("RH", z, offset, rng), 0.0, 100.0)
        v_wind = np.maximum(0.0, 3.0 + 1.5 * self.latent("v_wind", z, offset, rng))
        theta = rng.uniform(0.0, 360.0, size=n)

        meteo = {
            "T_air": t_air,
            "T_mod": t_air + 2.0 + 0.5 * noise * rng.standard_normal(n),
            "T_hs": t_air + 1.0 + 0.8 * noise * rng.standard_normal(n),
            "RH": rh,
            "RH_mod": np.clip(0.95 * rh + 2.0 * noise * rng.standard_normal(n), 0.0, 100.0),
            "P": np.maximum(0.0, 1.0 + 2.0 * self.latent("P", z, offset, rng)),
            "Phi_solar": np.maximum(0.0, 300.0 + 150.0 * self.latent("Phi_solar", z, offset, rng)),
            # saturation vapour pressure (kPa) scaled by relative humidity
            "P_vapor": 0.6108 * np.exp(17.27 * t_air / (t_air + 237.3)) * rh / 100.0,
            "P_bar": profile.barometric_base + 5.0 * self.latent("P_bar", z, offset, rng),
            "v_wind": v_wind,
            "v_gust": 1.5 * v_wind + 0.5 * np.abs(rng.standard_normal(n)),
            "v_north": v_wind * np.cos(np.deg2rad(theta)),
            "v_east": v_wind * np.sin(np.deg2rad(theta)),
            "theta_wind": theta,
            "Tilt_NS": 0.5 * self.latent("Tilt_NS", z, offset, rng),
            "Tilt_WE": 0.5 * self.latent("Tilt_WE", z, offset, rng),
        }
        return pd.DataFrame({name: meteo[name] for name in METEO_VARIABLES})

    def generate_patches(
        self, profile: StationProfile, vwc: np.ndarray, rng: np.random.Generator
    ) -> np.ndarray:
        """[n, H, W, 3] pixels in [0, 1]; wet soil renders darker."""
        n, size = len(vwc), self.patch_size
        c = self.coupling
        z = self.standardized(vwc)
        bz = c.image_signal * z + c.image_noise * rng.standard_normal(n)
        offset = c.shift_for(profile.station_id).image_offset
        brightness = np.clip(BRIGHTNESS_BASE + offset - BRIGHTNESS_SLOPE * bz, 0.05, 0.95)
        texture = c.texture_noise * rng.standard_normal((n, size, size, 3))
        pixels = brightness[:, None, None, None] * profile.tint()[None, None, None, :] + texture
        return np.clip(pixels, 0.0, 1.0)

    def generate_station(self, profile: StationProfile, n: int, rng: np.random.Generator) -> SampleSet:
        vwc = sample_truncated_normal(rng, profile.vwc_mean, profile.vwc_std, *profile.vwc_range, n)
        meteo = self.generate_meteo(profile, vwc, rng)
        patches = self.generate_patches(profile, vwc, rng)
        timestamps = pd.date_range(SERIES_START, periods=n, freq="h").strftime("%Y-%m-%dT%H:%M:%S")
        return SampleSet(
            patches=patches,
            features=meteo.to_numpy(),
            feature_names=METEO_VARIABLES,
            targets=vwc,
            station_ids=np.full(n, profile.station_id, dtype=object),
            timestamps=np.asarray(timestamps, dtype=object),
            sample_ids=np.asarray([self.fake.uuid4() for _ in range(n)], dtype=object),
        )

    def generate(self, n_per_station: int) -> SampleSet:
        if n_per_station < 1:
            raise ConfigurationError(f"n_per_station must be at least 1, got {n_per_station}")
        streams = np.random.SeedSequence(self.seed).spawn(len(self.profiles))
        parts = []
        for profile, stream in zip(self.profiles.values(), streams):
            parts.append(self.generate_station(profile, n_per_station, np.random.default_rng(stream)))
            logger.info("Generated %d samples for %s", n_per_station, profile.station_id)
        return SampleSet.concat(parts)


def generate_synthetic_dataset(
    profiles: Mapping[str, StationProfile],
    n_per_station: int,
    seed: int,
    coupling: SignalCoupling | None = None,
    patch_size: int = 64,
) -> SampleSet:
    return SyntheticDatasetGenerator(profiles, coupling, patch_size, seed).generate(n_per_station)
