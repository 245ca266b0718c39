"""Experiment configuration: one YAML document with strict parsing.

Sections mirror the pipeline stages: ``synth``, ``tokenizer``, ``model``,
``rmae``, ``merge``, ``train``.  Every knob has an explicit default; unknown
keys anywhere in the document fail fast with the offending path.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, get_args, get_origin

import yaml

from .model import ModelConfig
from .pretrain import PretrainConfig
from .synth import SynthConfig, TaskSynthSpec, default_synth_config
from .tokenizer import TokenizerConfig
from .training import TrainConfig


class ConfigError(Exception):
    """Malformed or unknown configuration content."""


@dataclass
class MergeConfig:
    """Co-upcycling settings."""

    trim_fraction: float = 0.5
    trim_scope: str = "global"  # or "per_tensor"
    region_emb_mode: str = "merge"  # or "reinit"

    def __post_init__(self):
        if not 0.0 <= self.trim_fraction < 1.0:
            raise ConfigError("merge.trim_fraction must lie in [0, 1)")
        if self.trim_scope not in ("global", "per_tensor"):
            raise ConfigError(f"unknown merge.trim_scope {self.trim_scope!r}")
        if self.region_emb_mode not in ("merge", "reinit"):
            raise ConfigError(f"unknown merge.region_emb_mode {self.region_emb_mode!r}")


@dataclass
class ArchConfig:
    """Model section of the document (tokenizer lives in its own section)."""

    hidden: int = 64
    blocks: int = 4
    heads: int = 8
    mlp_hidden: int = 128
    n_experts: int = 21
    top_k: int = 2
    cls_width: int = 4
    cls_ffn_hidden: int | None = None
    max_patches: int = 16


@dataclass
class ExperimentConfig:
    """Full experiment document."""

    synth: SynthConfig = field(default_factory=default_synth_config)
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    model: ArchConfig = field(default_factory=ArchConfig)
    rmae: PretrainConfig = field(default_factory=PretrainConfig)
    merge: MergeConfig = field(default_factory=MergeConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            hidden=self.model.hidden,
            blocks=self.model.blocks,
            heads=self.model.heads,
            mlp_hidden=self.model.mlp_hidden,
            n_experts=self.model.n_experts,
            top_k=self.model.top_k,
            cls_width=self.model.cls_width,
            cls_ffn_hidden=self.model.cls_ffn_hidden,
            max_patches=self.model.max_patches,
            tokenizer=self.tokenizer,
        )


_TUPLE_FIELDS = {"betas", "channels", "filters", "kernels", "strides",
                 "relevant_regions", "region_names", "gain_range", "mask_ratio_range"}


def _coerce(name: str, value: Any, annotation: Any, path: str) -> Any:
    if value is None:
        return None
    origin = get_origin(annotation)
    if dataclasses.is_dataclass(annotation) and isinstance(value, dict):
        return _build(annotation, value, path)
    if origin in (list,) and isinstance(value, list):
        (item_type,) = get_args(annotation) or (Any,)
        return [
            _coerce(name, item, item_type, f"{path}[{i}]") for i, item in enumerate(value)
        ]
    if name in _TUPLE_FIELDS and isinstance(value, (list, tuple)):
        return tuple(value)
    return value


def _build(cls, data: dict, path: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or cls.__name__}: expected a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{path or cls.__name__}: unknown keys {unknown}")
    kwargs = {}
    for key, value in data.items():
        f = known[key]
        sub_path = f"{path}.{key}" if path else key
        annotation = f.type if not isinstance(f.type, str) else _ANNOTATIONS.get(
            (cls, key), Any
        )
        kwargs[key] = _coerce(key, value, annotation, sub_path)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or cls.__name__}: {exc}") from exc


# Because this package uses postponed annotation evaluation, dataclass field
# types arrive as strings; nested-section types are resolved via this table.
_ANNOTATIONS: dict[tuple[type, str], Any] = {
    (ExperimentConfig, "synth"): SynthConfig,
    (ExperimentConfig, "tokenizer"): TokenizerConfig,
    (ExperimentConfig, "model"): ArchConfig,
    (ExperimentConfig, "rmae"): PretrainConfig,
    (ExperimentConfig, "merge"): MergeConfig,
    (ExperimentConfig, "train"): TrainConfig,
    (SynthConfig, "tasks"): list[TaskSynthSpec],
}


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build a strict ExperimentConfig from a parsed document."""
    return _build(ExperimentConfig, data or {})


def load_config(path: str) -> ExperimentConfig:
    """Load a YAML (or JSON) experiment document."""
    with open(path, encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(data)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Round-trippable plain-dict form (for provenance echoes)."""

    def convert(value):
        if dataclasses.is_dataclass(value) and not isinstance(value, type):
            return {f.name: convert(getattr(value, f.name)) for f in dataclasses.fields(value)}
        if isinstance(value, tuple):
            return [convert(v) for v in value]
        if isinstance(value, list):
            return [convert(v) for v in value]
        return value

    return convert(cfg)


def dump_config(cfg: ExperimentConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=True)
