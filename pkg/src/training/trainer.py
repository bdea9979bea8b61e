from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import pandas as pd

from common.errors import ConfigurationError, ContractError, TrainingDivergedError
from common.run_logging import get_logger
from data_load.samples import SampleSet
from models.fusion import FusionModel, HybridFusionModel, LearnableFusionModel, predict_samples
from nn_core.optim import OptimizerConfig, build_optimizer
from nn_core.tensor import Tensor
from training.losses import LOSS_KINDS, HybridCoefficients, HybridLossTerms, base_loss, hybrid_loss


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    optimizer: str = "adam"
    weight_decay: float = 0.0
    seed: int = 42
    loss: str = "mse"
    patience: int = 15
    record_wall_clock: bool = False
    coefficients: HybridCoefficients = field(default_factory=HybridCoefficients)

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ConfigurationError(f"batch_size must be >= 2 for batch-norm, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigurationError(f"Learning rate must be positive, got {self.lr}")
        if self.loss not in LOSS_KINDS:
            raise ConfigurationError(f"Unknown loss {self.loss!r}; expected one of {LOSS_KINDS}")
        if self.patience < 0:
            raise ConfigurationError(f"patience must be >= 0 (0 disables early stopping), got {self.patience}")
        OptimizerConfig(self.optimizer, weight_decay=self.weight_decay)

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "TrainingConfig":
        values = dict(values or {})
        coeffs = dict(values.pop("coefficients", None) or {})
        try:
            return cls(
                epochs=int(values.get("epochs", 100)),
                batch_size=int(values.get("batch_size", 32)),
                lr=float(values.get("lr", 1e-3)),
                optimizer=str(values.get("optimizer", "adam")),
                weight_decay=float(values.get("weight_decay", 0.0)),
                seed=int(values.get("seed", 42)),
                loss=str(values.get("loss", "mse")),
                patience=int(values.get("patience", 15)),
                record_wall_clock=bool(values.get("record_wall_clock", False)),
                coefficients=HybridCoefficients(
                    float(coeffs.get("delta", 1.0)), float(coeffs.get("gamma", 1.0)), float(coeffs.get("lambda", 1.0))
                ),
            )
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigurationError):
                raise
            raise ConfigurationError(f"Invalid training section: {e}") from e

    def replace(self, **changes: Any) -> "TrainingConfig":
        values = {name: getattr(self, name) for name in self.__dataclass_fields__}
        values.update(changes)
        return TrainingConfig(**values)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    l_concat: float | None = None
    l_meteo: float | None = None
    l_image: float | None = None
    alpha: float | None = None
    beta: float | None = None
    seconds: float = 0.0


@dataclass
class TrainingLog:
    variant: str
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")

    def __len__(self) -> int:
        return len(self.records)

    def columns(self, include_seconds: bool = False) -> list[str]:
        cols = ["epoch", "train_loss", "val_loss"]
        if self.variant == "hybrid":
            cols += ["l_concat", "l_meteo", "l_image"]
        if self.variant == "learnable_param":
            cols += ["alpha", "beta"]
        if include_seconds:
            cols.append("seconds")
        return cols

    def to_frame(self, include_seconds: bool = False) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.records], columns=list(EpochRecord.__dataclass_fields__))[
            self.columns(include_seconds)
        ]

    def to_csv(self, path: str | Path, include_seconds: bool = False) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame(include_seconds).to_csv(path, index=False, float_format="%.17g")
        return path


class ModelTrainer:
    """Mini-batch training with seeded shuffling, best-state retention and early stopping."""

    def __init__(self, model: FusionModel, config: TrainingConfig, logger: logging.Logger | None = None):
        self.model = model
        self.config = config
        self.logger = logger or get_logger("misme.train")
        self.rng = np.random.default_rng(config.seed)
        self.optimizer = build_optimizer(
            model.parameters(), config.lr, OptimizerConfig(config.optimizer, weight_decay=config.weight_decay)
        )

    def batch_indices(self, n: int) -> list[np.ndarray]:
        """Shuffled batches; a trailing single sample joins the previous batch."""
        perm = self.rng.permutation(n)
        chunks = [perm[i:i + self.config.batch_size] for i in range(0, n, self.config.batch_size)]
        if len(chunks) > 1 and len(chunks[-1]) == 1:
            chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
        return chunks

    def loss_for(self, samples: SampleSet, idx: np.ndarray) -> tuple[Tensor, HybridLossTerms | None]:
        batch = samples.batch(idx)
        if isinstance(self.model, HybridFusionModel):
            return hybrid_loss(self.model(batch), batch.targets, self.config.coefficients, self.config.loss)
        return base_loss(self.model.prediction(batch), batch.targets, self.config.loss), None

    def train_epoch(self, epoch: int, train: SampleSet) -> tuple[float, np.ndarray | None]:
        self.model.train()
        total, terms_total, seen = 0.0, None, 0
        for b, idx in enumerate(self.batch_indices(len(train))):
            self.optimizer.zero_grad()
            loss, terms = self.loss_for(train, idx)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDivergedError(epoch, b, value)
            loss.backward()
            self.optimizer.step()
            total += value * len(idx)
            seen += len(idx)
            if terms is not None:
                row = np.array([terms.concat, terms.meteo, terms.image]) * len(idx)
                terms_total = row if terms_total is None else terms_total + row
        return total / seen, (terms_total / seen if terms_total is not None else None)

    def validate(self, val: SampleSet) -> float:
        predictions = predict_samples(self.model, val, self.config.batch_size)
        return base_loss(Tensor(predictions), val.targets, self.config.loss).item()

    def fit(self, train: SampleSet, val: SampleSet) -> TrainingLog:
        if len(train) < 2:
            raise ContractError(f"Training needs at least 2 samples, got {len(train)}")
        if len(val) < 1:
            raise ContractError("Validation split is empty")
        log = TrainingLog(self.model.variant)
        best_state = self.model.state_dict()
        stale = 0
        for epoch in range(1, self.config.epochs + 1):
            started = time.perf_counter()
            alpha = beta = None
            if isinstance(self.model, LearnableFusionModel):
                alpha, beta = self.model.modality_weights()
            train_loss, terms = self.train_epoch(epoch, train)
            val_loss = self.validate(val)
            if not np.isfinite(val_loss):
                raise TrainingDivergedError(epoch, -1, val_loss)
            record = EpochRecord(epoch, train_loss, val_loss, alpha=alpha, beta=beta,
                                 seconds=time.perf_counter() - started)
            if terms is not None:
                record.l_concat, record.l_meteo, record.l_image = (float(t) for t in terms)
            log.records.append(record)
            self.logger.info("[%s] epoch %d train=%.6f val=%.6f", log.variant, epoch, train_loss, val_loss)

            if val_loss < log.best_val_loss:
                log.best_val_loss, log.best_epoch = val_loss, epoch
                best_state = self.model.state_dict()
                stale = 0
            else:
                stale += 1
                if self.config.patience and stale >= self.config.patience:
                    self.logger.info("Early stopping after epoch %d (best %d)", epoch, log.best_epoch)
                    break

        self.model.load_state_dict(best_state)
        self.model.eval()
        return log


def train_model(
    model: FusionModel,
    train: SampleSet,
    val: SampleSet,
    config: TrainingConfig,
    logger: logging.Logger | None = None,
) -> tuple[FusionModel, TrainingLog]:
    log = ModelTrainer(model, config, logger).fit(train, val)
    return model, log
