import hashlib
import json
import sqlite3

import pandas as pd
import pytest

from evaluation.report import validate_report_dict
import pipeline_executor
from pipeline_executor import execute_pipeline


@pytest.fixture
def run(cli_config):
    def invoke(*argv: str) -> int:
        command, *rest = argv
        return execute_pipeline([command, "--config", str(cli_config), *rest])

    return invoke


@pytest.fixture
def synthesized(run, tmp_path):
    assert run("synth") == 0
    return tmp_path / "dataset"


def snapshot(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


# -- synth / prepare ---------------------------------------------------------
def test_synth_writes_every_station(run, tmp_path):
    assert run("synth", "--n", "300") == 0
    index = pd.read_csv(tmp_path / "dataset" / "patch_index.csv")
    assert len(index) == 900
    assert index["station_id"].nunique() == 3
    for split in ("train", "val", "test"):
        assert (tmp_path / "dataset" / "splits" / f"{split}.csv").exists()


def test_synth_rerun_is_byte_identical(run, synthesized):
    first = snapshot(synthesized)
    assert run("synth") == 0
    assert snapshot(synthesized) == first


def test_synth_rejects_empty_station(run):
    assert run("synth", "--n", "0") == 2


def test_prepare_pairs_labelled_images(run, tmp_path, labelled_images):
    manifest, meteo = labelled_images
    assert run("prepare", "--manifest", str(manifest), "--meteo", str(meteo)) == 0
    dataset = tmp_path / "dataset"
    assert len(pd.read_csv(dataset / "patch_index.csv")) == 15
    assert (dataset / "dq_report.csv").exists()


def test_prepare_with_missing_meteo_file(run, tmp_path, labelled_images):
    manifest, _ = labelled_images
    assert run("prepare", "--manifest", str(manifest), "--meteo", str(tmp_path / "absent.csv")) == 2


def test_prepare_without_inputs_is_a_usage_error(run):
    assert run("prepare") == 1


# -- train / evaluate / report -----------------------------------------------
def test_train_meteo_only(run, synthesized, tmp_path):
    assert run("train", "--variant", "meteo_only") == 0
    out = tmp_path / "run"
    assert (out / "model.ckpt").exists()
    assert (out / "normalizer_stats.csv").exists()
    assert (out / "effective_config.yaml").exists()
    assert 1 <= len(pd.read_csv(out / "training_log.csv")) <= 3


def test_learnable_run_logs_modality_weights(run, synthesized, tmp_path):
    assert run("train", "--variant", "learnable_param") == 0
    log = pd.read_csv(tmp_path / "run" / "training_log.csv")
    assert {"alpha", "beta"} <= set(log.columns)
    assert run("report") == 0
    assert (tmp_path / "run" / "figures" / "modality_weights.svg").exists()


def test_evaluate_learnable_checkpoint(run, synthesized, tmp_path):
    assert run("train", "--variant", "learnable_param") == 0
    assert run("evaluate", "--checkpoint", str(tmp_path / "run" / "model.ckpt"),
               "--manifest", str(synthesized / "splits" / "test.csv")) == 0
    assert json.loads((tmp_path / "run" / "eval_report.json").read_text())["variant"] == "learnable_param"


def test_unknown_variant_is_a_usage_error(run, synthesized):
    assert run("train", "--variant", "late_fusion") == 1


def test_training_is_reproducible(run, synthesized, tmp_path):
    assert run("train", "--variant", "hybrid", "--out", str(tmp_path / "a")) == 0
    assert run("train", "--variant", "hybrid", "--out", str(tmp_path / "b")) == 0
    for name in ("model.ckpt", "training_log.csv", "normalizer_stats.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_evaluate_then_report(run, synthesized, tmp_path):
    out = tmp_path / "run"
    assert run("train") == 0
    assert run("evaluate", "--checkpoint", str(out / "model.ckpt"),
               "--manifest", str(synthesized / "splits" / "test.csv")) == 0

    report = json.loads((out / "eval_report.json").read_text())
    validate_report_dict(report)
    assert set(report["per_station"]) == {"Station1", "Station2", "Station3"}
    summary = pd.read_csv(out / "eval_summary.csv")
    assert list(summary["scope"])[0] == "overall"
    assert len(pd.read_csv(out / "residuals.csv")) == report["n_samples"]

    assert run("report", str(out)) == 0
    for name in ("loss_curves.svg", "residual_histogram.svg"):
        assert (out / "figures" / name).exists()
    assert "## Evaluation (concat)" in (out / "report.md").read_text()

    rendered = snapshot(out / "figures")
    assert run("report", str(out)) == 0
    assert snapshot(out / "figures") == rendered


def test_evaluate_missing_checkpoint(run, synthesized, tmp_path):
    assert run("evaluate", "--checkpoint", str(tmp_path / "none" / "model.ckpt"),
               "--manifest", str(synthesized / "splits" / "test.csv")) == 2


def test_report_needs_inputs(run, tmp_path):
    (tmp_path / "empty").mkdir()
    assert run("report", str(tmp_path / "empty")) == 2
    assert run("report", str(tmp_path / "nowhere")) == 2


# -- ablations ---------------------------------------------------------------
def test_combiner_ablation(run, synthesized, tmp_path):
    assert run("ablate", "--kind", "combiners", "--data", str(synthesized)) == 0
    frame = pd.read_csv(tmp_path / "run" / "ablation_combiners.csv")
    assert list(frame["combiner"]) == ["concatenate", "add", "multiply"]
    assert (tmp_path / "run" / "ablation_combiners.svg").exists()
    with sqlite3.connect(tmp_path / "db" / "runs.db") as con:
        cells = con.execute(
            "SELECT cell_index, cell, status FROM ablation_cells WHERE kind = 'combiners' ORDER BY cell_index"
        ).fetchall()
    assert [json.loads(cell)["combiner"] for _, cell, _ in cells] == ["concatenate", "add", "multiply"]
    assert {status for *_, status in cells} == {"ok"}


def test_learnable_mode_ablation(run, synthesized, tmp_path):
    assert run("ablate", "--kind", "learnable_mode", "--data", str(synthesized)) == 0
    assert len(pd.read_csv(tmp_path / "run" / "ablation_learnable_mode.csv")) == 2


def test_station_fraction_ablation_on_one_target(run, tmp_path):
    assert run("ablate", "--kind", "station_fraction", "--targets", "Station1") == 0
    frame = pd.read_csv(tmp_path / "run" / "ablation_station_fraction.csv")
    assert len(frame) == 4
    assert set(frame["target_station"]) == {"Station1"}


def test_unknown_target_station(run):
    assert run("ablate", "--kind", "station_fraction", "--targets", "Station9") == 1


def test_audit_records_each_run(run, synthesized, tmp_path):
    assert run("train", "--variant", "meteo_only") == 0
    assert run("synth", "--n", "0") == 2
    with sqlite3.connect(tmp_path / "db" / "runs.db") as con:
        rows = con.execute("SELECT command, status FROM pipeline_runs ORDER BY started_at, rowid").fetchall()
    assert rows == [("synth", "success"), ("train", "success"), ("synth", "failed")]


def test_unexpected_error_is_recorded_and_mapped(run, tmp_path, monkeypatch):
    def explode(args, cfg, logger):
        raise RuntimeError("disk vanished")

    monkeypatch.setitem(pipeline_executor.COMMANDS, "synth", explode)
    assert run("synth") == 3
    with sqlite3.connect(tmp_path / "db" / "runs.db") as con:
        rows = con.execute("SELECT status, message FROM pipeline_runs").fetchall()
    assert rows == [("failed", "RuntimeError: disk vanished")]
    assert "disk vanished" in (tmp_path / "logs" / "misme.log").read_text()


def test_audit_fingerprints_the_checkpoint(run, synthesized, tmp_path):
    assert run("train", "--variant", "hybrid", "--seed", "7") == 0
    checkpoint = tmp_path / "run" / "model.ckpt"
    with sqlite3.connect(tmp_path / "db" / "runs.db") as con:
        (variant, seed), = con.execute("SELECT variant, seed FROM pipeline_runs WHERE command = 'train'").fetchall()
        (digest,), = con.execute("SELECT sha256 FROM run_artifacts WHERE artifact = ?", (str(checkpoint),)).fetchall()
    assert (variant, seed) == ("hybrid", 7)
    assert digest == hashlib.sha256(checkpoint.read_bytes()).hexdigest()
