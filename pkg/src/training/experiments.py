from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np
import pandas as pd

from common.config import thread_cap
from common.errors import ConfigurationError, ContractError, MisMeError
from common.run_logging import get_logger
from data_clean.normalization import NormalizerStats, fit_normalizer, normalize_sample_set
from data_clean.splitting import DEFAULT_RATIOS, DatasetSplits, split_dataset
from data_load.samples import SampleSet
from evaluation.report import stationwise_report
from models.configs import COMBINERS, LEARNABLE_MODES, VARIANTS, FusionConfig
from models.fusion import LearnableFusionModel, build_model
from training.losses import HybridCoefficients
from training.trainer import TrainingConfig, train_model

logger = get_logger("misme.experiments")

DEFAULT_FRACTIONS: tuple[float, ...] = (0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0)
NAMED_COEFFICIENTS: tuple[tuple[float, float, float], ...] = (
    (1.0, 1.0, 1.0), (0.9, 0.0, 0.1), (0.9, 0.1, 0.0), (0.8, 0.2, 0.0),
)
RESULT_COLUMNS = ("test_mae", "test_mape", "band_fraction", "epochs_run", "best_epoch")


@dataclass(frozen=True)
class ExperimentData:
    """Normalized train/val/test sets sharing one training-split normalizer."""

    train: SampleSet
    val: SampleSet
    test: SampleSet
    normalizer: NormalizerStats

    @classmethod
    def from_splits(cls, splits: DatasetSplits, features: Sequence[str]) -> "ExperimentData":
        train = splits.train.select_features(features)
        stats = fit_normalizer(train)
        return cls(
            normalize_sample_set(stats, train),
            normalize_sample_set(stats, splits.val.select_features(features)),
            splits.test.select_features(features),
            stats,
        )


def run_cell(fusion: FusionConfig, training: TrainingConfig, data: ExperimentData) -> dict[str, Any]:
    """Train one model on ``data`` and score it on the test split."""
    model = build_model(fusion, training.seed)
    model, log = train_model(model, data.train, data.val, training)
    report = stationwise_report(model, data.test, data.normalizer)
    row = {
        "test_mae": report.mae,
        "test_mape": report.mape,
        "band_fraction": report.band_fraction,
        "epochs_run": len(log),
        "best_epoch": log.best_epoch,
    }
    if isinstance(model, LearnableFusionModel):
        row["alpha"], row["beta"] = model.modality_weights()
    return row


def run_cells(cells: Sequence[tuple[dict[str, Any], Callable[[], dict[str, Any]]]]) -> pd.DataFrame:
    """Run independent cells on a thread pool (MISME_THREADS); rows keep grid order.

    A failing cell is recorded with status 'failed' and does not stop the rest.
    """
    def guarded(cell: tuple[dict[str, Any], Callable[[], dict[str, Any]]]) -> dict[str, Any]:
        key, fn = cell
        try:
            return {**key, **fn(), "status": "ok", "error": ""}
        except MisMeError as e:
            logger.error("Cell %s failed: %s", key, e)
            return {**key, "status": "failed", "error": str(e)}
        except Exception as e:
            logger.exception("Cell %s failed unexpectedly", key)
            return {**key, "status": "failed", "error": f"{type(e).__name__}: {e}"}

    workers = min(thread_cap(), max(1, len(cells)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        rows = list(pool.map(guarded, cells))
    frame = pd.DataFrame(rows)
    for col in RESULT_COLUMNS:
        if col not in frame.columns:
            frame[col] = np.nan
    ordered = [c for c in frame.columns if c not in ("status", "error")] + ["status", "error"]
    return frame[ordered]


def simplex_grid(step: float) -> list[tuple[float, float, float]]:
    """All non-negative triples on a step lattice that sum to one."""
    if not 0 < step <= 1:
        raise ConfigurationError(f"Simplex step must lie in (0, 1], got {step}")
    n = int(round(1.0 / step))
    return [
        (round(a * step, 10), round(b * step, 10), round((n - a - b) * step, 10))
        for a in range(n, -1, -1)
        for b in range(n - a, -1, -1)
    ]


def default_coefficient_grid(
    named: Sequence[Sequence[float]] = NAMED_COEFFICIENTS,
    simplex_step: float | None = 0.5,
) -> list[HybridCoefficients]:
    triples = [tuple(float(v) for v in t) for t in named]
    if simplex_step:
        triples += simplex_grid(simplex_step)
    unique = list(dict.fromkeys(triples))
    return [HybridCoefficients(*t) for t in unique]


def run_coefficient_grid(
    fusion: FusionConfig,
    training: TrainingConfig,
    data: ExperimentData,
    grid: Sequence[HybridCoefficients],
) -> pd.DataFrame:
    """One hybrid model per (delta, gamma, lambda); every cell uses the same seed and data."""
    if not grid:
        raise ConfigurationError("Coefficient grid is empty")
    hybrid = fusion.replace(variant="hybrid")
    cells = [
        (
            {"delta": c.delta, "gamma": c.gamma, "lambda": c.lam},
            lambda c=c: run_cell(hybrid, training.replace(coefficients=c), data),
        )
        for c in grid
    ]
    return run_cells(cells)


def run_combiner_ablation(
    fusion: FusionConfig,
    training: TrainingConfig,
    data: ExperimentData,
    combiners: Sequence[str] = COMBINERS,
) -> pd.DataFrame:
    variant = fusion.variant if fusion.variant in ("concat", "hybrid") else "concat"
    cells = [
        ({"combiner": name}, lambda name=name: run_cell(fusion.replace(variant=variant, combiner=name), training, data))
        for name in combiners
    ]
    return run_cells(cells)


def run_learnable_mode_ablation(
    fusion: FusionConfig,
    training: TrainingConfig,
    data: ExperimentData,
    modes: Sequence[str] = LEARNABLE_MODES,
) -> pd.DataFrame:
    cells = [
        (
            {"learnable_mode": mode},
            lambda mode=mode: run_cell(fusion.replace(variant="learnable_param", learnable_mode=mode), training, data),
        )
        for mode in modes
    ]
    return run_cells(cells)


def run_variant_comparison(
    fusion: FusionConfig,
    training: TrainingConfig,
    data: ExperimentData,
    variants: Sequence[str] = VARIANTS,
) -> pd.DataFrame:
    cells = [
        ({"variant": v}, lambda v=v: run_cell(fusion.replace(variant=v), training, data))
        for v in variants
    ]
    return run_cells(cells)


@dataclass(frozen=True)
class StationFractionCell:
    target_station: str
    fraction: float
    data: ExperimentData
    n_target_train: int


def station_fraction_cells(
    samples: SampleSet,
    features: Sequence[str],
    target_station: str,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    seed: int = 42,
    ratios: Sequence[float] = DEFAULT_RATIOS,
) -> list[StationFractionCell]:
    """Training data for each fraction of the target station.

    Every station is split once (stratified); non-target train/val data is
    always used, the target contributes the first ceil(f * n) samples of a
    seeded ordering of its train and val splits (nested across fractions),
    and the target's test split is fixed.
    """
    stations = samples.stations
    if len(stations) < 2:
        raise ContractError(f"Station-fraction experiments need at least 2 stations, got {stations}")
    if target_station not in stations:
        raise ConfigurationError(f"Unknown target station {target_station!r}; available: {stations}")
    if any(not 0.0 <= f <= 1.0 for f in fractions):
        raise ConfigurationError(f"Fractions must lie in [0, 1], got {list(fractions)}")

    splits = split_dataset(samples, ratios, seed, stratify_by_station=True)
    rng = np.random.default_rng(seed)

    def partition(part: SampleSet) -> tuple[SampleSet, SampleSet]:
        is_target = part.station_ids == target_station
        others = part.subset(np.flatnonzero(~is_target))
        target = part.subset(rng.permutation(np.flatnonzero(is_target)))
        return others, target

    train_others, train_target = partition(splits.train)
    val_others, val_target = partition(splits.val)
    test_target = splits.test.subset(np.flatnonzero(splits.test.station_ids == target_station))

    cells = []
    for f in fractions:
        k_train = math.ceil(f * len(train_target) - 1e-9)
        k_val = math.ceil(f * len(val_target) - 1e-9)
        cell_splits = DatasetSplits(
            SampleSet.concat([train_others, train_target.subset(np.arange(k_train))]),
            SampleSet.concat([val_others, val_target.subset(np.arange(k_val))]),
            test_target,
        )
        cells.append(StationFractionCell(target_station, float(f), ExperimentData.from_splits(cell_splits, features), k_train))
    return cells


def run_station_fraction_experiment(
    fusion: FusionConfig,
    training: TrainingConfig,
    samples: SampleSet,
    features: Sequence[str],
    target_station: str,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    seed: int = 42,
) -> pd.DataFrame:
    """Curve of target-station test error against the share of its training data used."""
    cells = station_fraction_cells(samples, features, target_station, fractions, seed)
    return run_cells([
        (
            {"target_station": c.target_station, "fraction": c.fraction, "n_target_train": c.n_target_train},
            lambda c=c: run_cell(fusion, training, c.data),
        )
        for c in cells
    ])


def run_station_fraction_grid(
    fusion: FusionConfig,
    training: TrainingConfig,
    samples_by_target: dict[str, SampleSet],
    features: Sequence[str],
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    seed: int = 42,
) -> pd.DataFrame:
    """Station-fraction curves for several targets; each target may bring its own (shifted) dataset."""
    cells = []
    for target, samples in samples_by_target.items():
        for c in station_fraction_cells(samples, features, target, fractions, seed):
            cells.append((
                {"target_station": c.target_station, "fraction": c.fraction, "n_target_train": c.n_target_train},
                lambda c=c: run_cell(fusion, training, c.data),
            ))
    return run_cells(cells)
