from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from common.errors import ConfigurationError, ContractError, DimensionError, UndefinedCorrelationError
from common.run_logging import get_logger
from data_load.samples import METEO_VARIABLES

logger = get_logger("misme.features")

FEATURE_PRESETS: dict[str, tuple[str, ...]] = {
    "paper-default": ("T_air", "RH", "P", "P_bar", "Phi_solar", "Tilt_NS", "Tilt_WE", "v_wind"),
    "all": METEO_VARIABLES,
}
# resolved per dataset by correlation screening on the training split
AUTO_SELECTION = "auto"


def pearson_correlation(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DimensionError(f"Correlation needs two equal-length 1-D sequences, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise ContractError("Correlation needs at least 2 observations")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise UndefinedCorrelationError("Correlation is undefined for a constant sequence")
    xc = x - x.mean()
    yc = y - y.mean()
    r = np.sum(xc * yc) / (np.sqrt(np.sum(xc * xc)) * np.sqrt(np.sum(yc * yc)))
    return float(np.clip(r, -1.0, 1.0))


def correlation_matrix(table: pd.DataFrame, columns: Sequence[str]) -> pd.DataFrame:
    """Pairwise Pearson matrix; constant columns produce NaN rows/columns."""
    columns = list(columns)
    out = pd.DataFrame(np.nan, index=columns, columns=columns)
    values = {c: table[c].to_numpy(dtype=np.float64) for c in columns}
    for i, a in enumerate(columns):
        for b in columns[i:]:
            try:
                r = pearson_correlation(values[a], values[b])
            except UndefinedCorrelationError:
                continue
            out.loc[a, b] = out.loc[b, a] = r
    return out


@dataclass(frozen=True)
class FeatureSelection:
    features: tuple[str, ...]
    report: pd.DataFrame


def select_features(
    table: pd.DataFrame,
    target: str = "vwc",
    min_abs_r: float = 0.08,
    redundancy_r: float = 0.9,
    candidates: Sequence[str] | None = None,
) -> FeatureSelection:
    """Keep features correlated with the target, then prune redundant pairs.

    Candidates are screened by |r(feature, target)| >= min_abs_r. Survivors
    are visited by descending |r| (ties in candidate order) and dropped when
    their |r| with an already kept feature reaches redundancy_r. The result
    keeps candidate order.
    """
    if len(table) < 2:
        raise ContractError(f"Feature selection needs at least 2 records, got {len(table)}")
    if candidates is None:
        candidates = [c for c in METEO_VARIABLES if c in table.columns]
    missing = [c for c in list(candidates) + [target] if c not in table.columns]
    if missing:
        raise DimensionError(f"Columns missing for feature selection: {missing}")

    y = table[target].to_numpy(dtype=np.float64)
    rows: dict[str, dict] = {}
    eligible: list[tuple[float, int, str]] = []
    for order, name in enumerate(candidates):
        try:
            r = pearson_correlation(table[name].to_numpy(dtype=np.float64), y)
        except UndefinedCorrelationError:
            logger.warning("Feature %s is constant; excluded from selection", name)
            rows[name] = {"feature": name, "r_target": np.nan, "status": "constant"}
            continue
        rows[name] = {"feature": name, "r_target": r, "status": "below_threshold"}
        if abs(r) >= min_abs_r:
            eligible.append((-abs(r), order, name))

    kept: list[str] = []
    for _, _, name in sorted(eligible):
        x = table[name].to_numpy(dtype=np.float64)
        clash = next(
            (k for k in kept if abs(pearson_correlation(x, table[k].to_numpy(dtype=np.float64))) >= redundancy_r),
            None,
        )
        if clash is None:
            kept.append(name)
            rows[name]["status"] = "selected"
        else:
            rows[name]["status"] = f"redundant_with:{clash}"

    features = tuple(c for c in candidates if c in kept)
    report = pd.DataFrame([rows[c] for c in candidates], columns=["feature", "r_target", "status"])
    logger.info("Selected %d of %d features: %s", len(features), len(candidates), list(features))
    return FeatureSelection(features, report)


def resolve_feature_spec(spec: str | Sequence[str] | None) -> tuple[str, ...] | None:
    """Preset name, comma-separated list, or ``auto`` (returns None)."""
    if spec is None:
        return FEATURE_PRESETS["paper-default"]
    if isinstance(spec, str):
        if spec == AUTO_SELECTION:
            return None
        if spec in FEATURE_PRESETS:
            return FEATURE_PRESETS[spec]
        spec = [s.strip() for s in spec.split(",") if s.strip()]
    names = tuple(spec)
    unknown = [n for n in names if n not in METEO_VARIABLES]
    if unknown or not names:
        raise ConfigurationError(
            f"Unknown features {unknown}; use a preset {sorted(FEATURE_PRESETS)}, '{AUTO_SELECTION}' or variable names"
        )
    return names
