from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import pandas as pd

from common.errors import MissingInputError, ParseError, SchemaError
from common.run_logging import get_logger
from data_load.samples import METEO_VARIABLES
from data_quality.meteo_quality_checks import MeteoQualityChecker, file_row
from patch_tools.boxes import BoundingBox

logger = get_logger("misme.load")


@dataclass(frozen=True)
class MeteoRecord:
    station_id: str
    timestamp: pd.Timestamp
    values: Mapping[str, float]
    vwc: float


@dataclass(frozen=True)
class ManifestEntry:
    """One source image with its detected soil-patch boxes."""

    image: Path
    station_id: str
    timestamp: str
    boxes: tuple[BoundingBox, ...]
    vwc: float


def read_csv_strict(path: str | Path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"Input table not found: {path}")
    try:
        # cells stay text so the checker can report the exact unparseable one
        return pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError as e:
        raise SchemaError(f"{path} has no header row") from e


def load_meteo_table(
    path: str | Path,
    column_map: Mapping[str, str] | None = None,
    checker: MeteoQualityChecker | None = None,
) -> pd.DataFrame:
    """Parse a meteo CSV into typed rows; rows breaking a record invariant are dropped.

    ``column_map`` renames source headers to the canonical variable names.
    """
    raw = read_csv_strict(path)
    if column_map:
        raw = raw.rename(columns=dict(column_map))
    checker = checker or MeteoQualityChecker()
    typed, rejected = checker.evaluate_frame(raw, "meteo")
    if rejected.any():
        rows = [file_row(i) for i in typed.index[rejected]]
        logger.warning("Rejected %d meteo rows of %s violating invariants: rows %s", len(rows), path, rows)
    kept = typed.loc[~rejected].reset_index(drop=True)
    kept["station_id"] = kept["station_id"].astype(str)
    return kept


def to_records(table: pd.DataFrame) -> list[MeteoRecord]:
    return [
        MeteoRecord(
            station_id=str(row["station_id"]),
            timestamp=row["timestamp"],
            values={name: float(row[name]) for name in METEO_VARIABLES if name in row},
            vwc=float(row["vwc"]),
        )
        for _, row in table.iterrows()
    ]


def parse_manifest_line(obj: dict, line_no: int, base_dir: Path, required: list[str]) -> ManifestEntry:
    missing = [k for k in required if k not in obj]
    if missing:
        raise ParseError(f"Manifest line {line_no} is missing {missing}", row=line_no, column=missing[0])
    try:
        boxes = tuple(
            BoundingBox(
                float(b["x_min"]), float(b["y_min"]), float(b["x_max"]), float(b["y_max"]),
                float(b.get("confidence", 1.0)),
            )
            for b in obj["boxes"]
        )
        vwc = float(obj["vwc"])
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"Manifest line {line_no}: invalid box or vwc ({e})", row=line_no, column="boxes") from e
    try:
        pd.Timestamp(str(obj["timestamp"]))
    except ValueError as e:
        raise ParseError(
            f"Manifest line {line_no}: timestamp {obj['timestamp']!r} is not a date", row=line_no, column="timestamp"
        ) from e
    image = Path(obj["image"])
    return ManifestEntry(
        image=image if image.is_absolute() else base_dir / image,
        station_id=str(obj["station_id"]),
        timestamp=str(obj["timestamp"]),
        boxes=boxes,
        vwc=vwc,
    )


def load_patch_manifest(path: str | Path, checker: MeteoQualityChecker | None = None) -> list[ManifestEntry]:
    """JSON-lines manifest; image paths resolve relative to the manifest file."""
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"Patch manifest not found: {path}")
    checker = checker or MeteoQualityChecker()
    required = checker.schema["patch_manifest"]["required"]
    entries = []
    with path.open("r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"Manifest line {line_no} is not valid JSON: {e.msg}", row=line_no) from e
            entries.append(parse_manifest_line(obj, line_no, path.parent, required))
    n_boxes = sum(len(e.boxes) for e in entries)
    checker.record("patch_manifest", "entries_loaded", "INFO", True, len(entries), details=f"{n_boxes} boxes")
    return entries
