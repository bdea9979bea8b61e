import argparse
import logging
import sys
from pathlib import Path
from typing import Callable
from uuid import uuid4

import pandas as pd

from common.audit import AuditRepository
from common.config import RunConfig
from common.errors import MisMeError, MissingInputError, UsageError
from common.run_logging import build_logger
from data_clean.feature_selection import resolve_feature_spec
from data_clean.normalization import NormalizerStats
from data_clean.splitting import DatasetSplits
from data_generate.station_profiles import BUILTIN_PROFILES, SignalCoupling, StationShift, load_profiles
from data_generate.synthetic_generator import generate_synthetic_dataset
from data_load.dataset_store import DatasetStore, PreparedDataset, prepare_dataset
from data_load.meteo_loader import load_meteo_table, load_patch_manifest
from data_load.pairing import pair_manifest_with_meteo
from data_load.samples import SampleSet
from data_quality.meteo_quality_checks import MeteoQualityChecker
from evaluation.report import stationwise_report
from models.configs import COMBINERS, LEARNABLE_MODES, VARIANTS, FusionConfig, fusion_config_from_mapping
from models.fusion import build_model
from nn_core.checkpoint import load_checkpoint, save_checkpoint
from reporting.markdown_report import render_run_report
from reporting.plots import ABLATION_KINDS, plot_ablation
from training.experiments import (
    DEFAULT_FRACTIONS,
    ExperimentData,
    default_coefficient_grid,
    run_coefficient_grid,
    run_combiner_ablation,
    run_learnable_mode_ablation,
    run_station_fraction_grid,
    run_variant_comparison,
)
from training.trainer import TrainingConfig, train_model

Artifacts = list[tuple[Path, int]]
CHECKPOINT_NAME = "model.ckpt"
TRAINING_LOG_NAME = "training_log.csv"
NORMALIZER_NAME = "normalizer_stats.csv"
EFFECTIVE_CONFIG_NAME = "effective_config.yaml"
FLOAT_FORMAT = "%.17g"


class CommandLineParser(argparse.ArgumentParser):
    """Reports bad arguments as UsageError (exit 1) instead of exiting directly."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


# -- shared helpers --------------------------------------------------------
def prepare_from_config(samples: SampleSet, cfg: RunConfig) -> PreparedDataset:
    return prepare_dataset(
        samples,
        feature_spec=cfg.get("features.preset", "paper-default"),
        ratios=cfg.get("data.split_ratios", [0.65, 0.15, 0.20]),
        seed=cfg.seed,
        stratify_by_station=bool(cfg.get("data.stratify_by_station", True)),
        min_abs_r=float(cfg.get("features.min_abs_r", 0.08)),
        redundancy_r=float(cfg.get("features.redundancy_r", 0.9)),
    )


def synthesize(cfg: RunConfig, coupling: SignalCoupling | None = None, source: str | None = None) -> SampleSet:
    return generate_synthetic_dataset(
        load_profiles(source, cfg),
        int(cfg.get("data.n_per_station", 300)),
        cfg.seed,
        coupling or SignalCoupling.from_mapping(cfg.get("data.coupling")),
        int(cfg.get("data.patch_size", 64)),
    )


def write_store(root: Path, prepared: PreparedDataset, cfg: RunConfig) -> Artifacts:
    artifacts = DatasetStore(root).write(prepared)
    artifacts.append((cfg.echo(root), 0))
    return artifacts


def feature_list(cfg: RunConfig, stored: NormalizerStats | None) -> tuple[str, ...] | None:
    """Explicit feature spec wins; 'auto' falls back to the dataset's stored selection."""
    names = resolve_feature_spec(cfg.get("features.preset", "paper-default"))
    if names is None and stored is not None:
        return stored.features
    return names


def dataset_splits(cfg: RunConfig, data_dir: str | None) -> tuple[DatasetSplits, tuple[str, ...]]:
    """Splits and features from a stored dataset, or freshly synthesized when no directory is given."""
    if data_dir:
        store = DatasetStore(data_dir)
        store.require(store.normalizer_stats)
        features = feature_list(cfg, store.normalizer())
        return store.load_splits(features), features
    prepared = prepare_from_config(synthesize(cfg), cfg)
    return prepared.splits, prepared.features


def fusion_for(cfg: RunConfig, features: tuple[str, ...], samples: SampleSet, variant: str | None = None) -> FusionConfig:
    return fusion_config_from_mapping(cfg.section("model"), len(features), samples.patch_shape[0], variant or cfg.variant)


# -- commands --------------------------------------------------------------
def cmd_prepare(args: argparse.Namespace, cfg: RunConfig, logger: logging.Logger) -> Artifacts:
    manifest = args.manifest or cfg.get("paths.manifest")
    meteo_csv = args.meteo or cfg.get("paths.meteo_csv")
    if not manifest or not meteo_csv:
        raise UsageError("prepare needs --manifest and --meteo (or paths.manifest / paths.meteo_csv)")
    out = Path(args.out or cfg.get("paths.dataset_dir"))

    checker = MeteoQualityChecker(cfg.get("paths.meteo_schema"), logger)
    meteo = load_meteo_table(meteo_csv, cfg.get("data.column_map"), checker)
    entries = load_patch_manifest(manifest, checker)
    pairing = pair_manifest_with_meteo(
        entries, meteo, float(cfg.get("data.min_confidence", 0.5)), int(cfg.get("data.patch_size", 64))
    )
    print(f"Paired {len(pairing.samples)} patches; {pairing.n_unpaired} images without meteo, "
          f"{pairing.n_boxes_skipped} boxes below confidence")

    artifacts = write_store(out, prepare_from_config(pairing.samples, cfg), cfg)
    artifacts.append((checker.write_report(out), len(checker.results)))
    if not checker.passed:
        print("Data quality issues detected - see dq_report.csv")
    return artifacts


def cmd_synth(args: argparse.Namespace, cfg: RunConfig, logger: logging.Logger) -> Artifacts:
    out = Path(args.out or cfg.get("paths.dataset_dir"))
    samples = synthesize(cfg, source=args.profiles)
    print(f"Generated {len(samples)} samples across {len(samples.stations)} stations")
    return write_store(out, prepare_from_config(samples, cfg), cfg)


def cmd_train(args: argparse.Namespace, cfg: RunConfig, logger: logging.Logger) -> Artifacts:
    out = cfg.output_dir
    splits, features = dataset_splits(cfg, args.data or cfg.get("paths.dataset_dir"))
    data = ExperimentData.from_splits(splits, features)
    fusion = fusion_for(cfg, features, data.train)
    training = TrainingConfig.from_mapping(cfg.section("training"))

    model, log = train_model(build_model(fusion, training.seed), data.train, data.val, training, logger)
    print(f"Trained {fusion.variant} for {len(log)} epochs; best val loss {log.best_val_loss:.6f} at epoch {log.best_epoch}")
    return [
        (save_checkpoint(model.state_dict(), out / CHECKPOINT_NAME), 0),
        (log.to_csv(out / TRAINING_LOG_NAME, include_seconds=training.record_wall_clock), len(log)),
        (data.normalizer.to_csv(out / NORMALIZER_NAME), len(features)),
        (cfg.echo(out), 0),
    ]


def cmd_evaluate(args: argparse.Namespace, cfg: RunConfig, logger: logging.Logger) -> Artifacts:
    checkpoint = Path(args.checkpoint)
    manifest = Path(args.manifest)
    state = load_checkpoint(checkpoint)
    run_dir = checkpoint.parent
    for required in (run_dir / EFFECTIVE_CONFIG_NAME, run_dir / NORMALIZER_NAME, manifest):
        if not required.exists():
            raise MissingInputError(f"Evaluation input not found: {required}")
    # the training run's echoed config fixes the architecture
    trained = RunConfig.load(run_dir / EFFECTIVE_CONFIG_NAME)
    normalizer = NormalizerStats.from_csv(run_dir / NORMALIZER_NAME)
    samples = DatasetStore(manifest.parent.parent).load_manifest(manifest, normalizer.features)

    model = build_model(fusion_for(trained, normalizer.features, samples), trained.seed)
    model.load_state_dict(state)
    model.eval()
    report = stationwise_report(
        model, samples, normalizer,
        tuple(cfg.get("evaluation.band", (-0.05, 0.05))), int(cfg.get("evaluation.batch_size", 256)),
    )
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    summary = out / "eval_summary.csv"
    residuals = out / "residuals.csv"
    report.to_frame().to_csv(summary, index=False, float_format=FLOAT_FORMAT)
    report.residual_frame().to_csv(residuals, index=False, float_format=FLOAT_FORMAT)
    print(f"{report.variant}: MAE {report.mae:.4f}, MAPE {report.mape:.2f}%, "
          f"{100 * report.band_fraction:.2f}% of residuals in band")
    return [(report.to_json(out / "eval_report.json"), report.n_samples), (summary, len(report.per_station) + 1),
            (residuals, report.n_samples)]


def ablation_table(out: Path, kind: str) -> Path:
    return out / f"ablation_{kind}.csv"


def station_fraction_inputs(
    args: argparse.Namespace, cfg: RunConfig
) -> tuple[dict[str, SampleSet], tuple[str, ...]]:
    """One dataset per target station; synthesized data shifts the target's signal relation."""
    if args.data:
        splits, features = dataset_splits(cfg, args.data)
        samples = SampleSet.concat([splits.train, splits.val, splits.test])
        return {s: samples for s in samples.stations}, features

    shift = StationShift(**(cfg.get("experiments.station_shift") or {}))
    base = SignalCoupling.from_mapping(cfg.get("data.coupling"))
    by_target = {
        station: synthesize(cfg, base.with_shift(station, shift))
        for station in load_profiles(None, cfg)
    }
    first = next(iter(by_target.values()))
    return by_target, prepare_from_config(first, cfg).features


def cmd_ablate(args: argparse.Namespace, cfg: RunConfig, logger: logging.Logger) -> Artifacts:
    out = cfg.output_dir
    kind = args.kind
    exp = cfg.section("experiments")
    training = TrainingConfig.from_mapping(cfg.section("training"))

    if kind == "station_fraction":
        by_target, features = station_fraction_inputs(args, cfg)
        if args.targets:
            unknown = sorted(set(args.targets) - set(by_target))
            if unknown:
                raise UsageError(f"Unknown target stations {unknown}; available: {sorted(by_target)}")
            by_target = {s: by_target[s] for s in args.targets}
        fusion = fusion_for(cfg, features, next(iter(by_target.values())))
        fractions = exp.get("station_fractions", DEFAULT_FRACTIONS)
        frame = run_station_fraction_grid(fusion, training, by_target, features, fractions, cfg.seed)
    else:
        splits, features = dataset_splits(cfg, args.data)
        data = ExperimentData.from_splits(splits, features)
        fusion = fusion_for(cfg, features, data.train)
        if kind == "coefficients":
            grid = default_coefficient_grid(exp.get("coefficient_grid", ()), exp.get("coefficient_simplex_step"))
            frame = run_coefficient_grid(fusion, training, data, grid)
        elif kind == "combiners":
            frame = run_combiner_ablation(fusion, training, data, exp.get("combiners", COMBINERS))
        elif kind == "learnable_mode":
            frame = run_learnable_mode_ablation(fusion, training, data, exp.get("learnable_modes", LEARNABLE_MODES))
        else:
            frame = run_variant_comparison(fusion, training, data, exp.get("variants", VARIANTS))

    n_ok = int((frame["status"] == "ok").sum())
    print(f"Ablation {kind}: {n_ok} of {len(frame)} cells succeeded")
    table = ablation_table(out, kind)
    table.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(table, index=False, float_format=FLOAT_FORMAT)
    if n_ok == 0:
        raise MisMeError(f"Every {kind} ablation cell failed; see {table}")
    return [(table, len(frame)), (plot_ablation(frame, kind, out / f"ablation_{kind}.svg"), 0), (cfg.echo(out), 0)]


def cmd_report(args: argparse.Namespace, cfg: RunConfig, logger: logging.Logger) -> Artifacts:
    written = render_run_report(args.run_dir or cfg.output_dir)
    print(f"Wrote {len(written)} report files")
    return [(path, 0) for path in written]


COMMANDS: dict[str, Callable[[argparse.Namespace, RunConfig, logging.Logger], Artifacts]] = {
    "prepare": cmd_prepare,
    "synth": cmd_synth,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def build_parser() -> CommandLineParser:
    common = CommandLineParser(add_help=False)
    common.add_argument("--config", help="YAML file merged over config/pipeline_config.yaml")
    common.add_argument("--seed", type=int, help="Seed for generation, splits, initialization and shuffling")
    common.add_argument("--out", help="Output directory")
    common.add_argument("--variant", choices=VARIANTS, help="Model variant")
    common.add_argument("--features", help="Feature preset name, comma-separated list, or 'auto'")

    parser = CommandLineParser(description="Multimodal soil-moisture estimation pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", parents=[common], help="Crop, pair and split a labelled image manifest")
    p.add_argument("--manifest", help="JSON-lines patch manifest")
    p.add_argument("--meteo", help="Meteorological CSV")

    p = sub.add_parser("synth", parents=[common], help="Write a synthetic dataset in the prepared layout")
    p.add_argument("--profiles", default=BUILTIN_PROFILES, help="Station profile YAML, or 'table1'")
    p.add_argument("--n", type=int, dest="n_per_station", help="Samples per station")

    p = sub.add_parser("train", parents=[common], help="Train one model variant")
    p.add_argument("--data", help="Prepared dataset directory")

    p = sub.add_parser("evaluate", parents=[common], help="Score a checkpoint on a split manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True, help="Split manifest inside a prepared dataset")

    p = sub.add_parser("ablate", parents=[common], help="Run an experiment grid")
    p.add_argument("--kind", required=True, choices=sorted(ABLATION_KINDS))
    p.add_argument("--data", help="Prepared dataset directory; synthesized from config when omitted")
    p.add_argument("--targets", nargs="+", help="Target stations for station_fraction")

    p = sub.add_parser("report", parents=[common], help="Render plots and a markdown summary for a run directory")
    p.add_argument("run_dir", nargs="?")
    return parser


def config_overrides(args: argparse.Namespace) -> dict[str, object]:
    overrides = {
        "training.seed": args.seed,
        "paths.out_dir": args.out,
        "model.variant": args.variant,
        "features.preset": args.features,
    }
    if getattr(args, "n_per_station", None) is not None:
        overrides["data.n_per_station"] = args.n_per_station
    return overrides


def execute_pipeline(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = RunConfig.load(args.config, config_overrides(args))
    except MisMeError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code

    logger = build_logger(cfg.get("logging.log_dir", "logs"), "misme")
    run_id = str(uuid4())
    audit = AuditRepository(cfg.get("audit.db_path", "db/misme_runs.db"))
    audit.connect()
    audit.start_run(run_id, args.command, str(cfg.output_dir), cfg.variant, cfg.seed)
    logger.info("Run %s: %s", run_id, args.command)
    try:
        artifacts = COMMANDS[args.command](args, cfg, logger)
        for path, n_rows in artifacts:
            audit.log_artifact(run_id, path, n_rows)
        if args.command == "ablate":
            cells = pd.read_csv(ablation_table(cfg.output_dir, args.kind), keep_default_na=False, na_values=[""])
            audit.log_ablation_cells(run_id, args.kind, cells)
        audit.end_run(run_id, status="success", message=f"{args.command}: {len(artifacts)} artifacts")
        return 0
    except MisMeError as e:
        logger.error("Run %s failed (%s): %s", run_id, type(e).__name__, e)
        audit.end_run(run_id, status="failed", message=str(e))
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception("Run %s failed with an unexpected error", run_id)
        audit.end_run(run_id, status="failed", message=f"{type(e).__name__}: {e}")
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return MisMeError.exit_code
    finally:
        audit.close()


if __name__ == "__main__":
    sys.exit(execute_pipeline())
