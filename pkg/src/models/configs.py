from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

from common.errors import ConfigurationError

VARIANTS = ("image_only", "meteo_only", "concat", "hybrid", "learnable_param")
COMBINERS = ("concatenate", "add", "multiply")
LEARNABLE_MODES = ("dual", "single_complementary")


@dataclass(frozen=True)
class ImageExtractorConfig:
    """Conv stages (out_channels, kernel, stride) then global average pooling."""

    stages: tuple[tuple[int, int, int], ...] = ((16, 5, 2), (32, 3, 2), (64, 3, 1))
    feature_dim: int = 64
    input_size: int = 64
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(tuple(int(v) for v in s) for s in self.stages))
        if self.feature_dim < 1:
            raise ConfigurationError(f"Image feature dimension must be >= 1, got {self.feature_dim}")
        if not self.stages:
            raise ConfigurationError("Image extractor needs at least one conv stage")
        if any(len(s) != 3 or min(s) < 1 for s in self.stages):
            raise ConfigurationError(f"Conv stages must be positive (out_channels, kernel, stride): {self.stages}")
        if self.stages[-1][0] != self.feature_dim:
            raise ConfigurationError(
                f"Last conv stage has {self.stages[-1][0]} channels but feature_dim is {self.feature_dim}"
            )
        self.spatial_sizes()

    def spatial_sizes(self) -> list[int]:
        sizes, size = [], self.input_size
        for _, kernel, stride in self.stages:
            if size < kernel:
                raise ConfigurationError(
                    f"Input resolution {self.input_size} shrinks to {size} before a {kernel}x{kernel} kernel"
                )
            size = (size - kernel) // stride + 1
            sizes.append(size)
        return sizes


@dataclass(frozen=True)
class MSMEConfig:
    """Dense -> batch-norm -> ReLU -> dropout blocks ending at width output_dim."""

    input_dim: int = 8
    hidden: tuple[int, ...] = (64, 32)
    output_dim: int = 16
    dropout: float = 0.2
    batchnorm: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden):
            raise ConfigurationError(
                f"MSME widths must be >= 1: k={self.input_dim}, hidden={self.hidden}, m={self.output_dim}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"MSME dropout must lie in [0, 1), got {self.dropout}")


@dataclass(frozen=True)
class FusionConfig:
    variant: str = "concat"
    image: ImageExtractorConfig = field(default_factory=ImageExtractorConfig)
    msme: MSMEConfig = field(default_factory=MSMEConfig)
    combiner: str = "concatenate"
    fusion_hidden: tuple[int, ...] = (32, 16)
    projection_hidden: int = 32
    projection_dropout: float = 0.2
    learnable_mode: str = "dual"
    init_alpha: float = 1.0
    init_beta: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "fusion_hidden", tuple(int(h) for h in self.fusion_hidden))
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"Unknown model variant {self.variant!r}; expected one of {VARIANTS}")
        if self.combiner not in COMBINERS:
            raise ConfigurationError(f"Unknown combiner {self.combiner!r}; expected one of {COMBINERS}")
        if self.learnable_mode not in LEARNABLE_MODES:
            raise ConfigurationError(
                f"Unknown learnable mode {self.learnable_mode!r}; expected one of {LEARNABLE_MODES}"
            )
        if any(h < 1 for h in self.fusion_hidden) or self.projection_hidden < 1:
            raise ConfigurationError("Fusion and projection widths must be >= 1")
        if not 0.0 <= self.projection_dropout < 1.0:
            raise ConfigurationError(f"Projection dropout must lie in [0, 1), got {self.projection_dropout}")

    @property
    def uses_projection(self) -> bool:
        return self.variant in ("concat", "hybrid") and self.combiner != "concatenate"

    @property
    def fused_dim(self) -> int:
        if self.combiner == "concatenate":
            return self.image.feature_dim + self.msme.output_dim
        return self.msme.output_dim

    def replace(self, **changes: Any) -> "FusionConfig":
        values = {name: getattr(self, name) for name in self.__dataclass_fields__}
        values.update(changes)
        return FusionConfig(**values)


def fusion_config_from_mapping(
    model: Mapping[str, Any],
    input_dim: int,
    input_size: int,
    variant: str | None = None,
) -> FusionConfig:
    """Typed model config from the ``model`` section of a run config."""
    image = dict(model.get("image_extractor") or {})
    msme = dict(model.get("msme") or {})
    try:
        return FusionConfig(
            variant=variant or model.get("variant", "concat"),
            image=ImageExtractorConfig(
                stages=tuple(tuple(s) for s in image.get("stages", ImageExtractorConfig.stages)),
                feature_dim=int(image.get("feature_dim", 64)),
                input_size=int(input_size),
            ),
            msme=MSMEConfig(
                input_dim=int(input_dim),
                hidden=tuple(msme.get("hidden", (64, 32))),
                output_dim=int(msme.get("output_dim", 16)),
                dropout=float(msme.get("dropout", 0.2)),
                batchnorm=bool(msme.get("batchnorm", True)),
            ),
            combiner=model.get("combiner", "concatenate"),
            fusion_hidden=tuple(model.get("fusion_hidden", (32, 16))),
            projection_hidden=int(model.get("projection_hidden", 32)),
            projection_dropout=float(model.get("projection_dropout", 0.2)),
            learnable_mode=model.get("learnable_mode", "dual"),
            init_alpha=float(model.get("init_alpha", 1.0)),
            init_beta=float(model.get("init_beta", 1.0)),
        )
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigurationError):
            raise
        raise ConfigurationError(f"Invalid model section: {e}") from e
