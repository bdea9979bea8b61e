from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from common.config import RunConfig, load_yaml
from common.errors import ConfigurationError

BUILTIN_PROFILES = "table1"

# channel contrast per unit of sand fraction above the reference
TINT_SLOPE = 0.8
TINT_REFERENCE_SAND = 22.0


@dataclass(frozen=True)
class StationProfile:
    """Soil texture and vwc statistics of one station (vwc in cm3/cm3)."""

    station_id: str
    sand: float
    silt: float
    clay: float
    vwc_min: float
    vwc_max: float
    vwc_mean: float
    vwc_std: float
    barometric_base: float = 980.0

    def __post_init__(self):
        if not self.vwc_min < self.vwc_max:
            raise ConfigurationError(
                f"{self.station_id}: vwc range min {self.vwc_min} must be below max {self.vwc_max}"
            )
        if not self.vwc_min < self.vwc_mean < self.vwc_max:
            raise ConfigurationError(f"{self.station_id}: vwc mean {self.vwc_mean} outside its range")
        if self.vwc_std <= 0:
            raise ConfigurationError(f"{self.station_id}: vwc std must be positive, got {self.vwc_std}")
        if not (0.0 < self.vwc_min and self.vwc_max < 1.0):
            raise ConfigurationError(f"{self.station_id}: vwc range must lie inside (0, 1)")
        texture = self.sand + self.silt + self.clay
        if abs(texture - 100.0) > 0.5:
            raise ConfigurationError(f"{self.station_id}: sand+silt+clay = {texture:.2f}, expected 100 +/- 0.5")

    @property
    def vwc_range(self) -> tuple[float, float]:
        return self.vwc_min, self.vwc_max

    def tint(self) -> np.ndarray:
        """RGB multipliers with mean exactly 1; sandier soils render redder."""
        s = TINT_SLOPE * (self.sand - TINT_REFERENCE_SAND) / 100.0
        return np.array([1.0 + s, 1.0, 1.0 - s])


@dataclass(frozen=True)
class StationShift:
    image_offset: float = 0.0
    meteo_offset: float = 0.0


@dataclass(frozen=True)
class SignalCoupling:
    """How strongly each modality tracks vwc in generated data.

    Signal weights scale the vwc component, noise weights the independent
    component; station_offsets move a station's image baseline and meteo
    loadings so that the same vwc looks different there.
    """

    meteo_signal: float = 1.0
    meteo_noise: float = 1.0
    image_signal: float = 1.0
    image_noise: float = 1.0
    texture_noise: float = 0.05
    station_offsets: Mapping[str, StationShift] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("meteo_signal", "meteo_noise", "image_signal", "image_noise", "texture_noise"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"Coupling weight {name} must be non-negative")

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any] | None) -> "SignalCoupling":
        values = dict(values or {})
        offsets = {
            str(station): StationShift(**(shift or {}))
            for station, shift in (values.pop("station_offsets", None) or {}).items()
        }
        try:
            return cls(**values, station_offsets=offsets)
        except TypeError as e:
            raise ConfigurationError(f"Invalid coupling section: {e}") from e

    def shift_for(self, station_id: str) -> StationShift:
        return self.station_offsets.get(station_id, StationShift())

    def with_shift(self, station_id: str, shift: StationShift) -> "SignalCoupling":
        offsets = dict(self.station_offsets)
        offsets[station_id] = shift
        return SignalCoupling(
            self.meteo_signal, self.meteo_noise, self.image_signal, self.image_noise,
            self.texture_noise, offsets,
        )


def profiles_from_mapping(values: Mapping[str, Mapping[str, Any]]) -> dict[str, StationProfile]:
    if not values:
        raise ConfigurationError("No station profiles configured")
    profiles = {}
    for station_id, fields in values.items():
        try:
            profiles[str(station_id)] = StationProfile(station_id=str(station_id), **fields)
        except TypeError as e:
            raise ConfigurationError(f"Invalid profile for {station_id}: {e}") from e
    return dict(sorted(profiles.items()))


def load_profiles(source: str | Path | None, config: RunConfig) -> dict[str, StationProfile]:
    """Built-in station table from the run config, or a YAML profile file."""
    if source is None or str(source) == BUILTIN_PROFILES:
        return profiles_from_mapping(config.section("stations"))
    data = load_yaml(source)
    return profiles_from_mapping(data.get("stations", data))
