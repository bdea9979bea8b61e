from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from common.errors import ConfigurationError, DataPreparationError
from data_load.samples import SampleSet

DEFAULT_RATIOS: tuple[float, float, float] = (0.65, 0.15, 0.20)
SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class DatasetSplits:
    train: SampleSet
    val: SampleSet
    test: SampleSet

    def items(self):
        return zip(SPLIT_NAMES, (self.train, self.val, self.test))


def validate_ratios(ratios: Sequence[float]) -> tuple[float, ...]:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ConfigurationError(f"Split ratios must be three positive numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigurationError(f"Split ratios must sum to 1, got {sum(ratios)}")
    return ratios


def allocate_counts(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder allocation of n items; remainder ties go to earlier partitions."""
    exact = [n * r for r in ratios]
    counts = [int(np.floor(e + 1e-9)) for e in exact]
    remainders = [e - c for e, c in zip(exact, counts)]
    for i in sorted(range(len(ratios)), key=lambda i: (-remainders[i], i))[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split_indices(n: int, ratios: Sequence[float], rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    bounds = np.cumsum(allocate_counts(n, ratios))[:-1]
    return np.split(perm, bounds)


def split_dataset(
    samples: SampleSet,
    ratios: Sequence[float] = DEFAULT_RATIOS,
    seed: int = 42,
    stratify_by_station: bool = True,
) -> DatasetSplits:
    """Disjoint train/val/test cover of ``samples``, deterministic under ``seed``.

    Stratified splits allocate each station separately (stations in sorted
    order, one generator), so per-station proportions hold within one sample.
    """
    ratios = validate_ratios(ratios)
    if len(samples) < len(ratios):
        raise DataPreparationError(f"Need at least {len(ratios)} samples to split, got {len(samples)}")
    rng = np.random.default_rng(seed)
    parts: list[list[np.ndarray]] = [[], [], []]
    groups = (
        [np.flatnonzero(samples.station_ids == s) for s in samples.stations]
        if stratify_by_station
        else [np.arange(len(samples))]
    )
    for members in groups:
        for k, chunk in enumerate(split_indices(len(members), ratios, rng)):
            parts[k].append(members[chunk])
    train, val, test = (samples.subset(np.sort(np.concatenate(p))) for p in parts)
    return DatasetSplits(train, val, test)
