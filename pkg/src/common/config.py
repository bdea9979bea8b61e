from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from common.errors import ConfigurationError, MissingInputError

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parents[2] / "config" / "pipeline_config.yaml"
THREADS_ENV = "MISME_THREADS"


def load_yaml(path: Path | str) -> dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"Config file not found: {path}")
    with path.open("r", encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"Config file {path} must contain a mapping at the top level")
    return data


def deep_merge(base: Mapping[str, Any], override: Mapping[str, Any]) -> dict[str, Any]:
    merged = copy.deepcopy(dict(base))
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def set_dotted(mapping: dict[str, Any], dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = mapping
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value


def thread_cap(default: int = 1) -> int:
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return default
    try:
        value = int(raw)
    except ValueError as e:
        raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from e
    return max(1, value)


@dataclass
class RunConfig:
    """Defaults + optional config file + flag overrides, merged in that order."""

    values: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def load(
        cls,
        config_path: Path | str | None = None,
        overrides: Mapping[str, Any] | None = None,
        defaults_path: Path | str = DEFAULT_CONFIG_PATH,
    ) -> "RunConfig":
        values = load_yaml(defaults_path)
        if config_path:
            values = deep_merge(values, load_yaml(config_path))
        for dotted, value in (overrides or {}).items():
            if value is not None:
                set_dotted(values, dotted, value)
        return cls(values)

    def section(self, name: str) -> dict[str, Any]:
        return dict(self.values.get(name) or {})

    def get(self, dotted: str, default: Any = None) -> Any:
        node: Any = self.values
        for key in dotted.split("."):
            if not isinstance(node, Mapping) or key not in node:
                return default
            node = node[key]
        return node

    @property
    def seed(self) -> int:
        return int(self.get("training.seed", 42))

    @property
    def output_dir(self) -> Path:
        return Path(self.get("paths.out_dir", "runs/default"))

    @property
    def variant(self) -> str:
        return str(self.get("model.variant", "concat"))

    def echo(self, out_dir: Path | str) -> Path:
        """Write the effective configuration next to the run's outputs."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "effective_config.yaml"
        with path.open("w", encoding="utf-8") as f:
            yaml.safe_dump(self.values, f, sort_keys=True)
        return path
