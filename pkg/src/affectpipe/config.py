"""Pipeline configuration: JSON file + flag overrides, unknown keys rejected."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from .backend import BackendConfig
from .features import CmnConfig, MfccConfig, PitchConfig
from .tdnn import FinetuneConfig


class ConfigError(Exception):
    pass


@dataclass
class FeatureSection:
    mfcc: MfccConfig = field(default_factory=MfccConfig)
    pitch: PitchConfig = field(default_factory=PitchConfig)
    cmn: CmnConfig = field(default_factory=CmnConfig)
    augment_snr_db: list = field(default_factory=lambda: [10.0])


@dataclass
class TdnnSection:
    arch: str = "table4"      # table4 | mini | custom
    input_dim: int = 33
    layers: list = field(default_factory=list)  # custom arch rows

    def __post_init__(self):
        if self.arch not in ("table4", "mini", "custom"):
            raise ConfigError(f"tdnn.arch must be table4, mini or custom, got {self.arch!r}")
        if self.arch == "custom" and not self.layers:
            raise ConfigError("tdnn.arch 'custom' requires tdnn.layers")


@dataclass
class EvalSection:
    policy: str = "all_pairs"            # all_pairs | balanced
    label_policy: str = "canonical"      # canonical | raw
    n_target: int = 1000
    n_nontarget: int = 1000
    embedding_layer: int = 6


@dataclass
class PipelineConfig:
    features: FeatureSection = field(default_factory=FeatureSection)
    tdnn: TdnnSection = field(default_factory=TdnnSection)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    paths: dict = field(default_factory=dict)
    seed: int = 0


_SECTION_TYPES = {
    "features": FeatureSection,
    "tdnn": TdnnSection,
    "finetune": FinetuneConfig,
    "backend": BackendConfig,
    "eval": EvalSection,
}
_NESTED = {"mfcc": MfccConfig, "pitch": PitchConfig, "cmn": CmnConfig}


def _build_dataclass(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _NESTED and isinstance(value, dict):
            kwargs[key] = _build_dataclass(_NESTED[key], value, f"{where}.{key}")
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if key in out and isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def resolve_config(config_path: str | None, overrides: dict | None = None,
                   seed_flag: int | None = None) -> PipelineConfig:
    """Load + validate the config file, apply flag overrides, resolve the seed.

    Seed precedence: --seed flag, then config file, then AFFECT_SEED, then 0.
    """
    raw: dict = {}
    if config_path:
        try:
            with open(config_path, "r", encoding="utf-8") as f:
                raw = json.load(f)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {config_path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{config_path}: invalid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{config_path}: top level must be an object")
    merged = _deep_merge(raw, overrides or {})

    unknown = set(merged) - set(_SECTION_TYPES) - {"paths", "seed"}
    if unknown:
        raise ConfigError(f"unknown config section(s) {sorted(unknown)}")

    seed_in_config = merged.get("seed")
    if seed_flag is not None:
        seed = int(seed_flag)
    elif seed_in_config is not None:
        seed = int(seed_in_config)
    elif os.environ.get("AFFECT_SEED"):
        try:
            seed = int(os.environ["AFFECT_SEED"])
        except ValueError as exc:
            raise ConfigError(f"AFFECT_SEED must be an integer: {os.environ['AFFECT_SEED']!r}") from exc
    else:
        seed = 0

    cfg = PipelineConfig(seed=seed)
    for name, cls in _SECTION_TYPES.items():
        if name in merged:
            setattr(cfg, name, _build_dataclass(cls, merged[name], name))
    paths = merged.get("paths", {})
    if not isinstance(paths, dict):
        raise ConfigError("paths: expected an object")
    cfg.paths = paths
    # propagate the run seed into sections that carry their own
    cfg.finetune.seed = seed
    cfg.backend.seed = seed
    return cfg


def config_as_dict(cfg: PipelineConfig) -> dict:
    return dataclasses.asdict(cfg)
