import hashlib
import json
import sqlite3
from pathlib import Path

import numpy as np
import pandas as pd

AUDIT_DDL = {
    "pipeline_runs": (
        """
        CREATE TABLE IF NOT EXISTS pipeline_runs (
          run_id     TEXT PRIMARY KEY,
          command    TEXT,
          variant    TEXT,
          seed       INTEGER,
          out_dir    TEXT,
          started_at TEXT,
          ended_at   TEXT,
          status     TEXT,
          message    TEXT
        );
        """
    ),
    "run_artifacts": (
        """
        CREATE TABLE IF NOT EXISTS run_artifacts (
          id INTEGER PRIMARY KEY AUTOINCREMENT,
          run_id     TEXT,
          artifact   TEXT,
          n_rows     INTEGER,
          sha256     TEXT,
          created_at TEXT
        );
        """
    ),
    "ablation_cells": (
        """
        CREATE TABLE IF NOT EXISTS ablation_cells (
          run_id     TEXT,
          kind       TEXT,
          cell_index INTEGER,
          cell       TEXT,
          status     TEXT,
          error      TEXT,
          test_mae   REAL,
          test_mape  REAL,
          PRIMARY KEY (run_id, kind, cell_index)
        );
        """
    ),
}
# columns of an ablation table that are outcomes rather than the cell's settings
CELL_OUTCOMES = ("test_mae", "test_mape", "band_fraction", "epochs_run", "best_epoch", "alpha", "beta",
                 "status", "error")


def file_digest(path: str | Path) -> str | None:
    path = Path(path)
    if not path.is_file():
        return None
    return hashlib.sha256(path.read_bytes()).hexdigest()


def optional_float(value) -> float | None:
    return None if pd.isna(value) else float(value)


def json_value(value):
    if pd.isna(value):
        return None
    return value.item() if isinstance(value, np.generic) else value


class AuditRepository:
    """Run ledger for the command line, kept in SQLite.

    Creates three tables:
      - pipeline_runs: one row per command invocation with its variant and seed
      - run_artifacts: files written by a run, their row counts and SHA-256
        (a checkpoint's digest identifies the trained weights)
      - ablation_cells: one row per experiment-grid cell with its outcome
    """

    def __init__(self, db_path: str | Path):
        self.db_path = str(db_path)
        self.con: sqlite3.Connection | None = None

    def connect(self) -> sqlite3.Connection:
        Path(self.db_path).parent.mkdir(parents=True, exist_ok=True)
        self.con = sqlite3.connect(self.db_path)
        for sql in AUDIT_DDL.values():
            self.con.execute(sql)
        self.con.commit()
        return self.con

    def start_run(self, run_id: str, command: str, out_dir: str = "", variant: str = "", seed: int | None = None) -> None:
        assert self.con is not None, "connect() first"
        self.con.execute(
            "INSERT OR REPLACE INTO pipeline_runs(run_id, command, variant, seed, out_dir, started_at, status) "
            "VALUES(?, ?, ?, ?, ?, datetime('now'), 'started')",
            (run_id, command, variant, seed, out_dir),
        )
        self.con.commit()

    def end_run(self, run_id: str, status: str, message: str = "") -> None:
        assert self.con is not None, "connect() first"
        self.con.execute(
            "UPDATE pipeline_runs SET ended_at=datetime('now'), status=?, message=? WHERE run_id=?",
            (status, message, run_id),
        )
        self.con.commit()

    def log_artifact(self, run_id: str, artifact: str | Path, n_rows: int = 0) -> None:
        assert self.con is not None, "connect() first"
        self.con.execute(
            "INSERT INTO run_artifacts(run_id, artifact, n_rows, sha256, created_at) "
            "VALUES(?,?,?,?,datetime('now'))",
            (run_id, str(artifact), int(n_rows), file_digest(artifact)),
        )
        self.con.commit()

    def log_ablation_cells(self, run_id: str, kind: str, frame: pd.DataFrame) -> None:
        """Record each grid cell; the cell column holds its settings as JSON."""
        assert self.con is not None, "connect() first"
        settings = [c for c in frame.columns if c not in CELL_OUTCOMES]
        rows = []
        for i, (_, row) in enumerate(frame.iterrows()):
            cell = {c: json_value(row[c]) for c in settings}
            rows.append((
                run_id, kind, i, json.dumps(cell, default=str, sort_keys=True),
                str(row.get("status", "")), "" if pd.isna(row.get("error")) else str(row.get("error")),
                optional_float(row.get("test_mae")), optional_float(row.get("test_mape")),
            ))
        self.con.executemany(
            "INSERT OR REPLACE INTO ablation_cells(run_id, kind, cell_index, cell, status, error, test_mae, test_mape) "
            "VALUES(?,?,?,?,?,?,?,?)",
            rows,
        )
        self.con.commit()

    def close(self) -> None:
        if self.con is not None:
            self.con.close()
            self.con = None
