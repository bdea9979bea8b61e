"""Static SVG figures rendered from run artifacts.

Every figure goes through ``save_svg`` so reruns produce identical bytes:
the SVG id hash salt is fixed and no creation date is embedded.
"""
from __future__ import annotations

from pathlib import Path
from typing import Any, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from common.errors import SchemaError  # noqa: E402

SVG_HASH_SALT = "misme"
ABLATION_KINDS = ("coefficients", "combiners", "learnable_mode", "variants", "station_fraction")
# column naming each bar, for the kinds drawn as one bar per cell
BAR_COLUMNS = {"combiners": "combiner", "learnable_mode": "learnable_mode", "variants": "variant"}

plt.rcParams["svg.hashsalt"] = SVG_HASH_SALT


def save_svg(fig: plt.Figure, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def require_columns(frame: pd.DataFrame, columns: Sequence[str], what: str) -> None:
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise SchemaError(f"{what} lacks columns {missing}")


def plot_loss_curves(log: pd.DataFrame, path: str | Path, title: str = "") -> Path:
    """Train/val loss per epoch, plus the hybrid loss terms when logged."""
    require_columns(log, ("epoch", "train_loss", "val_loss"), "Training log")
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(log["epoch"], log["train_loss"], label="train", marker="o", markersize=2)
    ax.plot(log["epoch"], log["val_loss"], label="validation", marker="o", markersize=2)
    for term in ("l_concat", "l_meteo", "l_image"):
        if term in log.columns:
            ax.plot(log["epoch"], log[term], label=term, linestyle="--", linewidth=1)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    if title:
        ax.set_title(title)
    return save_svg(fig, path)


def plot_modality_weights(log: pd.DataFrame, path: str | Path) -> Path:
    """Trajectory of the learnable meteo (alpha) and image (beta) weights."""
    require_columns(log, ("epoch", "alpha", "beta"), "Training log")
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(log["epoch"], log["alpha"], label="alpha (meteo)")
    ax.plot(log["epoch"], log["beta"], label="beta (image)")
    ax.axhline(0.0, color="grey", linewidth=0.5)
    ax.set_xlabel("epoch")
    ax.set_ylabel("weight")
    ax.legend()
    return save_svg(fig, path)


def plot_residual_histogram(
    histogram: Mapping[str, Sequence[float]],
    band: Sequence[float],
    path: str | Path,
    band_fraction: float | None = None,
) -> Path:
    edges = np.asarray(histogram["edges"], dtype=np.float64)
    counts = np.asarray(histogram["counts"], dtype=np.float64)
    if edges.size != counts.size + 1:
        raise SchemaError("Histogram needs one more edge than counts")
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge", edgecolor="black", linewidth=0.3)
    for bound in band:
        ax.axvline(bound, color="tab:red", linestyle="--", linewidth=1)
    ax.set_xlabel("residual (prediction - target), cm3/cm3")
    ax.set_ylabel("samples")
    if band_fraction is not None:
        ax.set_title(f"{100.0 * band_fraction:.2f}% of residuals in [{band[0]:g}, {band[1]:g}]")
    return save_svg(fig, path)


def plot_station_band_fractions(report: Mapping[str, Any], path: str | Path) -> Path:
    stations = sorted(report["per_station"])
    fractions = [report["per_station"][s]["band_fraction"] for s in stations]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(["overall", *stations], [report["band_fraction"], *fractions])
    ax.set_ylim(0.0, 1.0)
    ax.set_ylabel("share of residuals in band")
    return save_svg(fig, path)


def coefficient_label(row: Mapping[str, Any]) -> str:
    return f"{row['delta']:g}/{row['gamma']:g}/{row['lambda']:g}"


def plot_ablation(frame: pd.DataFrame, kind: str, path: str | Path, metric: str = "test_mape") -> Path:
    """Bar chart per cell, or one line per target station for station-fraction runs.

    Failed cells are left out.
    """
    if kind not in ABLATION_KINDS:
        raise SchemaError(f"Unknown ablation kind {kind!r}")
    require_columns(frame, (metric, "status"), f"{kind} ablation table")
    ok = frame[frame["status"] == "ok"]
    fig, ax = plt.subplots(figsize=(7, 4))
    if kind == "station_fraction":
        require_columns(ok, ("target_station", "fraction"), "station_fraction ablation table")
        for station, rows in ok.groupby("target_station", sort=True):
            rows = rows.sort_values("fraction")
            ax.plot(100.0 * rows["fraction"], rows[metric], marker="o", label=str(station))
        ax.set_xlabel("share of target-station training data (%)")
        ax.legend()
    else:
        if kind == "coefficients":
            labels = [coefficient_label(r) for r in ok.to_dict("records")]
            ax.set_xlabel("delta/gamma/lambda")
        else:
            labels = ok[BAR_COLUMNS[kind]].astype(str).tolist()
            ax.set_xlabel(BAR_COLUMNS[kind])
        ax.bar(labels, ok[metric])
        ax.tick_params(axis="x", labelrotation=45)
    ax.set_ylabel(metric)
    return save_svg(fig, path)
