from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from common.errors import ConfigurationError, DimensionError
from data_load.samples import ModelBatch, SampleSet
from models.configs import FusionConfig
from models.extractors import ImageFeatureExtractor, MSMEExtractor, ProjectionHead, UnimodalHead
from nn_core.layers import BatchNorm1d, Dense, Module, ReLU, Sequential
from nn_core.tensor import Parameter, Tensor, concatenate


@dataclass(frozen=True)
class HybridOutputs:
    """Per-sample predictions of the combined (cO), meteo (mO) and image (iO) predictors."""

    combined: Tensor
    meteo: Tensor
    image: Tensor

    def __post_init__(self):
        if not (self.combined.shape == self.meteo.shape == self.image.shape):
            raise DimensionError("Hybrid predictor outputs disagree on batch size")


@dataclass(frozen=True)
class LearnableOutputs:
    prediction: Tensor
    meteo: Tensor
    image: Tensor
    alpha: Tensor
    beta: Tensor


def combine_features(image_feats: Tensor, meteo_feats: Tensor, combiner: str) -> Tensor:
    """Concatenate to [B, n+m], or add/multiply at width m (image features already projected)."""
    if combiner == "concatenate":
        return concatenate([image_feats, meteo_feats], axis=1)
    if image_feats.shape != meteo_feats.shape:
        raise DimensionError(
            f"{combiner} fusion needs matching widths, got {image_feats.shape} and {meteo_feats.shape}"
        )
    if combiner == "add":
        return image_feats + meteo_feats
    if combiner == "multiply":
        return image_feats * meteo_feats
    raise ConfigurationError(f"Unknown combiner {combiner!r}")


def batch_tensors(batch: ModelBatch) -> tuple[Tensor, Tensor]:
    return Tensor(batch.patches), Tensor(batch.features)


class FusionModel(Module):
    """Common surface of the five variants; ``prediction`` is what gets deployed."""

    def __init__(self, cfg: FusionConfig):
        self.cfg = cfg

    @property
    def variant(self) -> str:
        return self.cfg.variant

    def prediction(self, batch: ModelBatch) -> Tensor:
        return self(batch)

    def predict(self, batch: ModelBatch) -> np.ndarray:
        return self.prediction(batch).numpy().copy()


class ImageOnlyModel(FusionModel):
    def __init__(self, cfg: FusionConfig, rng: np.random.Generator):
        super().__init__(cfg)
        self.image_extractor = ImageFeatureExtractor(cfg.image, rng)
        self.image_head = UnimodalHead(cfg.image.feature_dim, rng)

    def forward(self, batch: ModelBatch) -> Tensor:
        patches, _ = batch_tensors(batch)
        return self.image_head(self.image_extractor(patches))


class MeteoOnlyModel(FusionModel):
    def __init__(self, cfg: FusionConfig, rng: np.random.Generator):
        super().__init__(cfg)
        self.msme = MSMEExtractor(cfg.msme, rng)
        self.meteo_head = UnimodalHead(cfg.msme.output_dim, rng)

    def forward(self, batch: ModelBatch) -> Tensor:
        _, features = batch_tensors(batch)
        return self.meteo_head(self.msme(features))


class ConcatFusionModel(FusionModel):
    """Both extractors -> combiner -> batch-norm -> dense stack -> scalar."""

    def __init__(self, cfg: FusionConfig, rng: np.random.Generator):
        super().__init__(cfg)
        self.image_extractor = ImageFeatureExtractor(cfg.image, rng)
        self.msme = MSMEExtractor(cfg.msme, rng)
        if cfg.uses_projection:
            self.projection = ProjectionHead(
                cfg.image.feature_dim, cfg.projection_hidden, cfg.msme.output_dim, cfg.projection_dropout, rng
            )
        self.fusion_norm = BatchNorm1d(cfg.fused_dim)
        layers: list[Module] = []
        width = cfg.fused_dim
        for out in cfg.fusion_hidden:
            layers += [Dense(width, out, rng), ReLU()]
            width = out
        layers.append(Dense(width, 1, rng))
        self.predictor = Sequential(*layers)

    def extract(self, batch: ModelBatch) -> tuple[Tensor, Tensor]:
        patches, features = batch_tensors(batch)
        return self.image_extractor(patches), self.msme(features)

    def fuse(self, image_feats: Tensor, meteo_feats: Tensor) -> Tensor:
        if self.cfg.uses_projection:
            image_feats = self.projection(image_feats)
        return combine_features(image_feats, meteo_feats, self.cfg.combiner)

    def combined_prediction(self, image_feats: Tensor, meteo_feats: Tensor) -> Tensor:
        fused = self.fusion_norm(self.fuse(image_feats, meteo_feats))
        return self.predictor(fused).reshape(fused.shape[0])

    def forward(self, batch: ModelBatch) -> Tensor:
        return self.combined_prediction(*self.extract(batch))


class HybridFusionModel(ConcatFusionModel):
    """Concat pathway plus auxiliary unimodal heads on the shared extractors.

    Shared-pathway parameter names match ConcatFusionModel, so a concat
    state dict loads into the hybrid with ``strict=False``.
    """

    def __init__(self, cfg: FusionConfig, rng: np.random.Generator):
        super().__init__(cfg, rng)
        self.meteo_head = UnimodalHead(cfg.msme.output_dim, rng)
        self.image_head = UnimodalHead(cfg.image.feature_dim, rng)

    def forward(self, batch: ModelBatch) -> HybridOutputs:
        image_feats, meteo_feats = self.extract(batch)
        return HybridOutputs(
            combined=self.combined_prediction(image_feats, meteo_feats),
            meteo=self.meteo_head(meteo_feats),
            image=self.image_head(image_feats),
        )

    def prediction(self, batch: ModelBatch) -> Tensor:
        return self(batch).combined


class LearnableFusionModel(FusionModel):
    """y = alpha * P_meteo(mO) + beta * P_image(iO) with trainable scalar weights.

    In single_complementary mode beta is tied to 1 - alpha.
    """

    def __init__(self, cfg: FusionConfig, rng: np.random.Generator):
        super().__init__(cfg)
        self.image_extractor = ImageFeatureExtractor(cfg.image, rng)
        self.msme = MSMEExtractor(cfg.msme, rng)
        self.meteo_head = UnimodalHead(cfg.msme.output_dim, rng)
        self.image_head = UnimodalHead(cfg.image.feature_dim, rng)
        self.alpha = Parameter(np.array(cfg.init_alpha), "alpha")
        if cfg.learnable_mode == "dual":
            self.beta = Parameter(np.array(cfg.init_beta), "beta")

    def weights(self) -> tuple[Tensor, Tensor]:
        if self.cfg.learnable_mode == "dual":
            return self.alpha, self.beta
        return self.alpha, 1.0 - self.alpha

    def modality_weights(self) -> tuple[float, float]:
        alpha, beta = self.weights()
        return alpha.item(), beta.item()

    def forward(self, batch: ModelBatch) -> LearnableOutputs:
        patches, features = batch_tensors(batch)
        meteo = self.meteo_head(self.msme(features))
        image = self.image_head(self.image_extractor(patches))
        alpha, beta = self.weights()
        return LearnableOutputs(alpha * meteo + beta * image, meteo, image, alpha, beta)

    def prediction(self, batch: ModelBatch) -> Tensor:
        return self(batch).prediction


MODEL_CLASSES: dict[str, type[FusionModel]] = {
    "image_only": ImageOnlyModel,
    "meteo_only": MeteoOnlyModel,
    "concat": ConcatFusionModel,
    "hybrid": HybridFusionModel,
    "learnable_param": LearnableFusionModel,
}


def predict_samples(model: FusionModel, samples: SampleSet, batch_size: int = 256) -> np.ndarray:
    """Deployed predictions in eval mode, chunked; the model's mode is restored afterwards."""
    was_training = model.training
    model.eval()
    try:
        chunks = [
            model.predict(samples.batch(np.arange(start, min(start + batch_size, len(samples)))))
            for start in range(0, len(samples), batch_size)
        ]
    finally:
        if was_training:
            model.train()
    return np.concatenate(chunks) if chunks else np.zeros(0)


def build_model(cfg: FusionConfig, seed: int = 42) -> FusionModel:
    """Fresh model for ``cfg.variant``; initialization and dropout masks follow ``seed``."""
    return MODEL_CLASSES[cfg.variant](cfg, np.random.default_rng(seed))
