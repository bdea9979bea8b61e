import json
import logging
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Dict, Iterable, List, Optional

import numpy as np
import pandas as pd

from common.errors import MissingInputError, ParseError, SchemaError
from common.run_logging import get_logger

DEFAULT_SCHEMA_PATH = Path(__file__).resolve().parents[2] / "config" / "meteo_schema.json"

# data rows start on line 2 of the file, after the header
FIRST_DATA_LINE = 2


@dataclass
class DQResult:
    table: str
    check: str
    severity: str
    passed: bool
    n_affected: int
    details: str = ""


def file_row(index: int) -> int:
    return int(index) + FIRST_DATA_LINE


class MeteoQualityChecker:
    """Config-driven checks for meteorological tables.

    Structural problems (missing columns, unparseable cells) raise; row-level
    invariant breaches are recorded and reported back as a rejection mask so
    the loader can drop those rows and keep the rest.
    """

    def __init__(
            self,
            schema_path: Path | str | None = None,
            logger: Optional[logging.Logger] = None,
    ):
        self.schema_path = Path(schema_path) if schema_path else DEFAULT_SCHEMA_PATH
        self.schema: Dict[str, Dict] = self.load_schema(self.schema_path)
        self.logger = logger or get_logger("misme.dq")
        self.results: List[DQResult] = []

    def load_schema(self, path: Path) -> Dict[str, Dict]:
        if not path.exists():
            raise MissingInputError(f"Meteo schema JSON not found: {path}")
        with path.open("r", encoding="utf-8") as f:
            return json.load(f)

    def record(
        self,
        table: str,
        check: str,
        severity: str,
        passed: bool,
        n_affected: int = 0,
        details: str = "",
    ) -> None:
        rec = DQResult(
            table=table,
            check=check,
            severity=severity,
            passed=passed,
            n_affected=int(n_affected),
            details=details,
        )
        self.results.append(rec)
        level = logging.INFO if severity == "INFO" else (logging.WARNING if severity == "WARNING" else logging.ERROR)
        if passed:
            level = logging.INFO
        msg = f"[{table}] {check} | {'PASS' if passed else 'FAIL'} | affected={n_affected}"
        if details:
            msg += f" | {details}"
        self.logger.log(level, msg)

    def check_required_columns(self, name: str, df: pd.DataFrame, required: Iterable[str]) -> None:
        required = list(required)
        missing = [c for c in required if c not in df.columns]
        extra = [c for c in df.columns if c not in required]
        self.record(name, "required_columns_missing", "ERROR", len(missing) == 0, len(missing), details=str(missing))
        if extra:
            self.record(name, "extra_columns_present", "INFO", True, len(extra), details=str(extra))
        if missing:
            raise SchemaError(f"[{name}] missing required columns: {missing}")

    def check_numeric(self, name: str, df: pd.DataFrame, cols: Iterable[str]) -> pd.DataFrame:
        """Convert columns to float; the first unparseable cell raises ParseError."""
        out = df.copy()
        for col in cols:
            converted = pd.to_numeric(out[col], errors="coerce")
            bad = converted.isna() | ~np.isfinite(converted.to_numpy(dtype=float, na_value=np.nan))
            if bad.any():
                index = bad[bad].index[0]
                row = file_row(index)
                self.record(name, f"unparseable({col})", "ERROR", False, int(bad.sum()), details=f"first at row {row}")
                raise ParseError(
                    f"[{name}] cannot parse {col}={df.at[index, col]!r} at row {row}", row=row, column=col
                )
            # float() parses with correct rounding, unlike the fast numeric path
            out[col] = out[col].map(float).astype(float)
        return out

    def check_dates(self, name: str, df: pd.DataFrame, date_cols: Iterable[str]) -> pd.DataFrame:
        out = df.copy()
        for col in date_cols:
            parsed = pd.to_datetime(out[col], format="ISO8601", errors="coerce")
            bad = parsed.isna()
            if bad.any():
                index = bad[bad].index[0]
                row = file_row(index)
                self.record(name, f"invalid_date({col})", "ERROR", False, int(bad.sum()), details=f"first at row {row}")
                raise ParseError(
                    f"[{name}] cannot parse timestamp {df.at[index, col]!r} at row {row}", row=row, column=col
                )
            out[col] = parsed
        return out

    def check_ranges(self, name: str, df: pd.DataFrame, ranges: Dict[str, list], closed: bool = True) -> pd.Series:
        rejected = pd.Series(False, index=df.index)
        for col, bounds in ranges.items():
            if col not in df.columns:
                continue
            lo, hi = bounds
            inside = df[col].between(lo, hi) if closed else (df[col] > lo) & (df[col] < hi)
            bad = ~inside
            n_bad = int(bad.sum())
            interval = f"[{lo}, {hi}]" if closed else f"({lo}, {hi})"
            self.record(
                name, f"out_of_range({col})", "WARNING", n_bad == 0, n_bad,
                details=f"expected {interval}; rows {[file_row(i) for i in df.index[bad]][:20]}" if n_bad else "",
            )
            rejected |= bad
        return rejected

    def check_non_negative(self, name: str, df: pd.DataFrame, cols: Iterable[str]) -> pd.Series:
        rejected = pd.Series(False, index=df.index)
        for col in cols:
            if col not in df.columns:
                continue
            bad = df[col] < 0
            n_bad = int(bad.sum())
            self.record(
                name, f"negative_values({col})", "WARNING", n_bad == 0, n_bad,
                details=f"rows {[file_row(i) for i in df.index[bad]][:20]}" if n_bad else "",
            )
            rejected |= bad
        return rejected

    def check_duplicate_keys(self, name: str, df: pd.DataFrame, key_cols: Iterable[str]) -> None:
        """Rows sharing one (station, timestamp) key; pairing keeps the first."""
        key_cols = [c for c in key_cols if c in df.columns]
        if not key_cols:
            return
        dup_mask = df.duplicated(subset=key_cols, keep="first")
        n_dups = int(dup_mask.sum())
        details = f"first at row {file_row(dup_mask.idxmax())}" if n_dups else ""
        self.record(name, f"duplicate_key({','.join(key_cols)})", "WARNING", n_dups == 0, n_dups, details=details)

    def evaluate_frame(self, df: pd.DataFrame, name: str = "meteo") -> tuple[pd.DataFrame, pd.Series]:
        """Validate and type a raw meteo frame.

        Returns the typed frame and a boolean Series marking rows that break
        a row-level invariant (range, sign).
        """
        cfg = self.schema[name]
        self.check_required_columns(name, df, cfg.get("required", []))
        typed = self.check_numeric(name, df, cfg.get("numeric", []))
        typed = self.check_dates(name, typed, cfg.get("date_cols", []))

        rejected = pd.Series(False, index=typed.index)
        if ranges := cfg.get("ranges"):
            rejected |= self.check_ranges(name, typed, ranges, closed=True)
        if open_ranges := cfg.get("open_ranges"):
            rejected |= self.check_ranges(name, typed, open_ranges, closed=False)
        if nn := cfg.get("non_negative", []):
            rejected |= self.check_non_negative(name, typed, nn)
        if key_cols := cfg.get("duplicate_key_cols", []):
            self.check_duplicate_keys(name, typed, key_cols)

        n_rejected = int(rejected.sum())
        self.logger.info("DQ summary for %s: %d rows, %d rejected", name, len(typed), n_rejected)
        return typed, rejected

    @property
    def passed(self) -> bool:
        return all(r.passed or r.severity == "INFO" for r in self.results)

    def write_report(self, out_dir: Path | str, stem: str = "dq_report") -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        report_json = out_dir / f"{stem}.json"
        rows = [asdict(r) for r in self.results]
        with report_json.open("w", encoding="utf-8") as f:
            json.dump(rows, f, indent=2)
        pd.DataFrame(rows, columns=list(DQResult.__dataclass_fields__)).to_csv(out_dir / f"{stem}.csv", index=False)
        self.logger.info("Wrote DQ report to %s", report_json)
        return report_json
