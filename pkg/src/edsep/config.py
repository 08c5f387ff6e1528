"""Layered run configuration: defaults <- JSON file <- --set overrides.

Parsing is strict: unknown sections or keys are errors naming the offender,
duplicate JSON keys are rejected, and parse errors carry line/column. Every
artifact-producing command echoes the fully resolved configuration (plus the
root seed) into its output directory as resolved_config.json, which is itself
a loadable config file.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields, replace

from .data import DatasetSpec
from .dsp import StftConfig
from .sample import SamplerConfig
from .sde import SdeParams
from .train import TrainConfig


class ConfigError(ValueError):
    """Configuration file or override problem."""


@dataclass(frozen=True)
class ModelConfig:
    hidden: tuple = (256, 256, 256)
    dtype: str = "float64"  # float32 allowed for speed, float64 for tests
    noise_cond_mode: str = "log_half_sigma"
    init_seed: int = 0
    alpha: float = 0.5
    beta: float = 0.15

    def __post_init__(self):
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"dtype must be float64 or float32, got {self.dtype!r}")


_TUPLE_FIELDS = {"hidden", "snr_range_db"}
_SECTIONS = {
    "sde": SdeParams,
    "stft": StftConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "sample": SamplerConfig,
    "data": DatasetSpec,
}


@dataclass(frozen=True)
class RunConfig:
    sde: SdeParams
    stft: StftConfig
    model: ModelConfig
    train: TrainConfig
    sample: SamplerConfig
    data: DatasetSpec
    paths: dict
    seed: int = 0

    def to_dict(self):
        d = {name: asdict(getattr(self, name)) for name in _SECTIONS}
        for sec in d.values():
            for key in list(sec):
                if key in _TUPLE_FIELDS:
                    sec[key] = list(sec[key])
        d["paths"] = dict(self.paths)
        d["seed"] = self.seed
        return d


def default_config():
    return RunConfig(
        sde=SdeParams(),
        stft=StftConfig(),
        model=ModelConfig(),
        train=TrainConfig(),
        sample=SamplerConfig(),
        data=DatasetSpec(),
        paths={},
        seed=0,
    )


def _reject_duplicates(pairs):
    seen = {}
    for key, value in pairs:
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} in JSON object")
        seen[key] = value
    return seen


def _apply_section(section_name, cls, current, updates):
    valid = {f.name for f in fields(cls)}
    clean = {}
    for key, value in updates.items():
        if key not in valid:
            raise ConfigError(f"unknown key {section_name}.{key}")
        if key in _TUPLE_FIELDS:
            if not isinstance(value, list):
                raise ConfigError(
                    f"{section_name}.{key} expects a JSON list, e.g. [128,128], "
                    f"got {value!r}"
                )
            value = tuple(value)
        clean[key] = value
    try:
        return replace(current, **clean)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid value in section {section_name!r}: {e}") from e


def _apply_tree(cfg, tree):
    for section_name, payload in tree.items():
        if section_name == "paths":
            if not isinstance(payload, dict):
                raise ConfigError("paths must be an object")
            cfg = replace(cfg, paths={**cfg.paths, **payload})
        elif section_name == "seed":
            if not isinstance(payload, int):
                raise ConfigError("seed must be an integer")
            cfg = replace(cfg, seed=payload)
        elif section_name in _SECTIONS:
            if not isinstance(payload, dict):
                raise ConfigError(f"section {section_name!r} must be an object")
            cfg = replace(
                cfg,
                **{
                    section_name: _apply_section(
                        section_name, _SECTIONS[section_name], getattr(cfg, section_name), payload
                    )
                },
            )
        else:
            raise ConfigError(f"unknown key {section_name}")
    return cfg


def parse_set_override(text):
    """Parse one --set item of the form section.key=value (value as JSON,
    falling back to a bare string)."""
    if "=" not in text:
        raise ConfigError(f"--set expects section.key=value, got {text!r}")
    dotted, raw = text.split("=", 1)
    parts = dotted.strip().split(".")
    if len(parts) != 2 and not (len(parts) == 1 and parts[0] == "seed"):
        raise ConfigError(f"--set key must be section.key (or seed), got {dotted!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    if len(parts) == 1:
        return {"seed": value}
    return {parts[0]: {parts[1]: value}}


def load_config(path=None, overrides=()):
    """Resolve defaults <- optional JSON file <- --set overrides, strictly."""
    cfg = default_config()
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as f:
                text = f.read()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        try:
            tree = json.loads(text, object_pairs_hook=_reject_duplicates)
        except json.JSONDecodeError as e:
            raise ConfigError(
                f"config parse error at line {e.lineno}, column {e.colno}: {e.msg}"
            ) from e
        if not isinstance(tree, dict):
            raise ConfigError("config root must be a JSON object")
        cfg = _apply_tree(cfg, tree)
    if overrides:
        # merge all --set items into one tree so co-dependent fields (e.g.
        # stft.n_fft and stft.hop) can be changed together without tripping
        # a validator mid-way
        merged = {}
        for item in overrides:
            tree = parse_set_override(item)
            for key, val in tree.items():
                if isinstance(val, dict):
                    merged.setdefault(key, {}).update(val)
                else:
                    merged[key] = val
        cfg = _apply_tree(cfg, merged)
    return cfg


def write_resolved(cfg, out_dir):
    """Echo the resolved config (including the root seed) into out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "resolved_config.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(cfg.to_dict(), f, sort_keys=True, indent=2)
        f.write("\n")
    return path
