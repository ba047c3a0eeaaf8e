"""JSON pipeline configuration.

Example::

    {
      "tiling": {"base_width": 640, "base_height": 640, "scale_factor": 0.5,
                 "scale_count": 2, "overlap_ratio": 0.25, "min_visibility": 0.3},
      "kv": {"area_threshold_fraction": 0.05},
      "detector": {"kind": "synthetic", "noise_seed": 0},
      "stages": {"stage1": {"endpoint": "http://host/v1/chat/completions",
                            "model_name": "vision-model"},
                 "stage2": {"model_name": "text-model"},
                 "enable_detector": true, "enable_stage1": true, "enable_stage2": true},
      "transport": {"retries": 2, "backoff": 0.5},
      "keywords": "keywords.json",
      "input_dir": "images/",
      "output_dir": "out/",
      "parallelism": 2
    }

Relative paths resolve against the config file's directory. API keys are
read from the environment variable named by ``api_key_env``.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .detector import ProviderConfig
from .errors import ConfigError
from .kvmap import KvConfig
from .llm import EndpointConfig, StageConfig
from .tiler import TilingConfig


@dataclass(frozen=True)
class TransportConfig:
    retries: int = 2
    backoff: float = 0.5


@dataclass
class PipelineConfig:
    tiling: TilingConfig = field(default_factory=TilingConfig)
    kv: KvConfig = field(default_factory=KvConfig)
    detector: ProviderConfig = field(default_factory=ProviderConfig)
    stages: StageConfig = field(default_factory=StageConfig)
    transport: TransportConfig = field(default_factory=TransportConfig)
    keywords: Path | None = None
    input_dir: Path | None = None
    output_dir: Path | None = None
    parallelism: int = 1

    def __post_init__(self) -> None:
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")


def _build(cls, data: Any, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _resolve(base: Path, value: Any) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def config_from_dict(data: dict, base_dir: Path = Path(".")) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    stages_raw = dict(data.get("stages") or {})
    for key in ("stage1", "stage2"):
        stages_raw[key] = _build(EndpointConfig, stages_raw.get(key), f"stages.{key}")
    detector_raw = dict(data.get("detector") or {})
    if detector_raw.get("kind") == "file" and detector_raw.get("location"):
        detector_raw["location"] = str(_resolve(base_dir, detector_raw["location"]))
    try:
        return PipelineConfig(
            tiling=_build(TilingConfig, data.get("tiling"), "tiling"),
            kv=_build(KvConfig, data.get("kv"), "kv"),
            detector=_build(ProviderConfig, detector_raw, "detector"),
            stages=_build(StageConfig, stages_raw, "stages"),
            transport=_build(TransportConfig, data.get("transport"), "transport"),
            keywords=_resolve(base_dir, data.get("keywords")),
            input_dir=_resolve(base_dir, data.get("input_dir")),
            output_dir=_resolve(base_dir, data.get("output_dir")),
            parallelism=int(data.get("parallelism", 1)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return config_from_dict(data, path.parent)
