from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import pandas as pd

from common.errors import MissingInputError
from common.run_logging import get_logger
from evaluation.report import validate_report_dict
from reporting.plots import (
    ABLATION_KINDS,
    plot_ablation,
    plot_loss_curves,
    plot_modality_weights,
    plot_residual_histogram,
    plot_station_band_fractions,
)

logger = get_logger("misme.report")

TRAINING_LOG = "training_log.csv"
EVAL_REPORT = "eval_report.json"
ABLATION_PREFIX = "ablation_"
FIGURES_DIR = "figures"
REPORT_NAME = "report.md"
FLOAT_FMT = ".4f"


@dataclass
class RunArtifacts:
    """Inputs found in a run directory."""

    run_dir: Path
    training_log: Path | None = None
    eval_report: Path | None = None
    ablations: dict[str, Path] = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return self.training_log is None and self.eval_report is None and not self.ablations

    def missing(self) -> list[str]:
        absent = []
        if self.training_log is None:
            absent.append(TRAINING_LOG)
        if self.eval_report is None:
            absent.append(EVAL_REPORT)
        if not self.ablations:
            absent.append(f"{ABLATION_PREFIX}<kind>.csv")
        return absent


def discover_artifacts(run_dir: str | Path) -> RunArtifacts:
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise MissingInputError(f"Run directory not found: {run_dir}")
    found = RunArtifacts(run_dir)
    if (run_dir / TRAINING_LOG).exists():
        found.training_log = run_dir / TRAINING_LOG
    if (run_dir / EVAL_REPORT).exists():
        found.eval_report = run_dir / EVAL_REPORT
    for path in sorted(run_dir.glob(f"{ABLATION_PREFIX}*.csv")):
        kind = path.stem[len(ABLATION_PREFIX):]
        if kind in ABLATION_KINDS:
            found.ablations[kind] = path
    return found


def table(frame: pd.DataFrame) -> str:
    return frame.to_markdown(index=False, floatfmt=FLOAT_FMT)


def training_section(path: Path, figures: Path, written: list[Path]) -> list[str]:
    log = pd.read_csv(path, float_precision="round_trip")
    lines = ["## Training", ""]
    written.append(plot_loss_curves(log, figures / "loss_curves.svg"))
    lines += [f"![loss curves]({FIGURES_DIR}/loss_curves.svg)", ""]
    if {"alpha", "beta"} <= set(log.columns):
        written.append(plot_modality_weights(log, figures / "modality_weights.svg"))
        lines += [f"![modality weights]({FIGURES_DIR}/modality_weights.svg)", ""]
    best = log.loc[log["val_loss"].idxmin()]
    lines += [
        f"Epochs run: {len(log)}; best epoch {int(best['epoch'])} with validation loss {best['val_loss']:{FLOAT_FMT}}.",
        "",
    ]
    return lines


def evaluation_section(path: Path, figures: Path, written: list[Path]) -> list[str]:
    with path.open("r", encoding="utf-8") as f:
        report = json.load(f)
    validate_report_dict(report)
    written.append(plot_residual_histogram(report["histogram"], report["band"], figures / "residual_histogram.svg",
                                           report["band_fraction"]))
    written.append(plot_station_band_fractions(report, figures / "station_band_fractions.svg"))
    rows = [{"scope": "overall", **{k: report[k] for k in ("n_samples", "mae", "mape", "band_fraction")}}]
    rows += [{"scope": s, **v} for s, v in sorted(report["per_station"].items())]
    return [
        f"## Evaluation ({report['variant']})",
        "",
        table(pd.DataFrame(rows)),
        "",
        f"![residual histogram]({FIGURES_DIR}/residual_histogram.svg)",
        "",
        f"![band fraction per station]({FIGURES_DIR}/station_band_fractions.svg)",
        "",
    ]


def ablation_section(kind: str, path: Path, figures: Path, written: list[Path]) -> list[str]:
    frame = pd.read_csv(path, keep_default_na=False, na_values=[""], float_precision="round_trip")
    name = f"{ABLATION_PREFIX}{kind}.svg"
    written.append(plot_ablation(frame, kind, figures / name))
    failed = int((frame["status"] != "ok").sum())
    lines = [f"## Ablation: {kind}", "", table(frame.drop(columns=["error"], errors="ignore")), ""]
    if failed:
        lines += [f"{failed} of {len(frame)} cells failed; see {path.name}.", ""]
    lines += [f"![{kind}]({FIGURES_DIR}/{name})", ""]
    return lines


def render_run_report(run_dir: str | Path) -> list[Path]:
    """Render figures and report.md for whatever artifacts the run directory holds.

    Raises MissingInputError listing the expected inputs when none are present.
    """
    found = discover_artifacts(run_dir)
    if found.empty:
        raise MissingInputError(f"No report inputs in {found.run_dir}; expected any of {found.missing()}")
    for name in found.missing():
        logger.warning("Report input %s not found in %s", name, found.run_dir)

    figures = found.run_dir / FIGURES_DIR
    written: list[Path] = []
    lines = [f"# Run report: {found.run_dir.name}", ""]
    if found.training_log is not None:
        lines += training_section(found.training_log, figures, written)
    if found.eval_report is not None:
        lines += evaluation_section(found.eval_report, figures, written)
    for kind, path in found.ablations.items():
        lines += ablation_section(kind, path, figures, written)

    report_path = found.run_dir / REPORT_NAME
    report_path.write_text("\n".join(lines), encoding="utf-8")
    written.append(report_path)
    logger.info("Rendered %d report files into %s", len(written), found.run_dir)
    return written
