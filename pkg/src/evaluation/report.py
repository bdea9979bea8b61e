"""Station-wise evaluation reports.

JSON layout written by ``EvalReport.to_json`` (keys in REPORT_SCHEMA_KEYS):

    variant                  model variant name
    n_samples                number of evaluated samples
    mae                      cm3/cm3
    mape                     percent
    band                     [lo, hi] residual band, inclusive
    band_fraction            share of residuals inside the band
    histogram                {"edges": [...], "counts": [...]}
    per_station              {station_id: {n_samples, mae, mape, band_fraction}}
    normalizer_fingerprint   sha256 of the training-split statistics
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import pandas as pd

from common.errors import SchemaError
from data_clean.normalization import NormalizerStats, normalize_sample_set
from data_load.samples import SampleSet
from evaluation.metrics import DEFAULT_BAND, ResidualHistogram, mae, mape, residual_band_analysis
from models.fusion import FusionModel, predict_samples

REPORT_SCHEMA_KEYS = (
    "variant", "n_samples", "mae", "mape", "band", "band_fraction",
    "histogram", "per_station", "normalizer_fingerprint",
)
STATION_SCHEMA_KEYS = ("n_samples", "mae", "mape", "band_fraction")


@dataclass(frozen=True)
class StationReport:
    station_id: str
    n_samples: int
    mae: float
    mape: float
    band_fraction: float


@dataclass
class EvalReport:
    variant: str
    n_samples: int
    mae: float
    mape: float
    band: tuple[float, float]
    band_fraction: float
    histogram: ResidualHistogram
    per_station: dict[str, StationReport] = field(default_factory=dict)
    normalizer_fingerprint: str = ""
    sample_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=object))
    station_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=object))
    predictions: np.ndarray = field(default_factory=lambda: np.zeros(0))
    targets: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def residuals(self) -> np.ndarray:
        return self.predictions - self.targets

    def to_dict(self) -> dict[str, Any]:
        return {
            "variant": self.variant,
            "n_samples": self.n_samples,
            "mae": self.mae,
            "mape": self.mape,
            "band": list(self.band),
            "band_fraction": self.band_fraction,
            "histogram": self.histogram.to_dict(),
            "per_station": {
                s: {k: getattr(r, k) for k in STATION_SCHEMA_KEYS} for s, r in sorted(self.per_station.items())
            },
            "normalizer_fingerprint": self.normalizer_fingerprint,
        }

    def to_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
        return path

    def to_frame(self) -> pd.DataFrame:
        """Summary rows: overall first, then one per station."""
        rows = [{"scope": "overall", "n_samples": self.n_samples, "mae": self.mae, "mape": self.mape,
                 "band_fraction": self.band_fraction}]
        rows += [
            {"scope": s, "n_samples": r.n_samples, "mae": r.mae, "mape": r.mape, "band_fraction": r.band_fraction}
            for s, r in sorted(self.per_station.items())
        ]
        return pd.DataFrame(rows)

    def residual_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "sample_id": self.sample_ids,
            "station_id": self.station_ids,
            "target": self.targets,
            "prediction": self.predictions,
            "residual": self.residuals,
        })


def validate_report_dict(report: Mapping[str, Any]) -> None:
    missing = [k for k in REPORT_SCHEMA_KEYS if k not in report]
    if missing:
        raise SchemaError(f"Evaluation report lacks keys {missing}")
    for station, values in report["per_station"].items():
        absent = [k for k in STATION_SCHEMA_KEYS if k not in values]
        if absent:
            raise SchemaError(f"Station {station} report lacks keys {absent}")
    if set(report["histogram"]) != {"edges", "counts"}:
        raise SchemaError("Histogram must hold exactly 'edges' and 'counts'")
    if len(report["histogram"]["edges"]) != len(report["histogram"]["counts"]) + 1:
        raise SchemaError("Histogram needs one more edge than counts")


def report_from_predictions(
    variant: str,
    predictions: np.ndarray,
    samples: SampleSet,
    band: tuple[float, float] = DEFAULT_BAND,
    fingerprint: str = "",
) -> EvalReport:
    overall = residual_band_analysis(predictions, samples.targets, band)
    per_station = {}
    for station in samples.stations:
        mask = samples.station_ids == station
        p, t = predictions[mask], samples.targets[mask]
        per_station[station] = StationReport(
            station_id=station,
            n_samples=int(mask.sum()),
            mae=mae(p, t),
            mape=mape(p, t),
            band_fraction=residual_band_analysis(p, t, band).fraction,
        )
    return EvalReport(
        variant=variant,
        n_samples=len(samples),
        mae=mae(predictions, samples.targets),
        mape=mape(predictions, samples.targets),
        band=overall.band,
        band_fraction=overall.fraction,
        histogram=overall.histogram,
        per_station=per_station,
        normalizer_fingerprint=fingerprint,
        sample_ids=samples.sample_ids,
        station_ids=samples.station_ids,
        predictions=np.asarray(predictions, dtype=np.float64),
        targets=samples.targets,
    )


def stationwise_report(
    model: FusionModel,
    samples: SampleSet,
    normalizer: NormalizerStats,
    band: tuple[float, float] = DEFAULT_BAND,
    batch_size: int = 256,
) -> EvalReport:
    """Overall and per-station metrics from one eval-mode inference pass.

    Raw samples are normalized with the training-split statistics; already
    normalized samples must carry the same fingerprint.
    """
    if samples.normalization == "raw":
        samples = samples.select_features(normalizer.features)
    normalized = normalize_sample_set(normalizer, samples)
    predictions = predict_samples(model, normalized, batch_size)
    return report_from_predictions(model.variant, predictions, normalized, band, normalizer.fingerprint())
