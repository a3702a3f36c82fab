"""Flat ``key = value`` configuration text: parsing, typing, formatting.

This one format serves both the CLI config files and the config blob
embedded in checkpoints.  Lines are ``key = value`` with ``#`` comments;
unknown keys are rejected against a schema and every parse error carries
its line number.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ConfigError
from .network import ArchConfig


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_tuple(text: str) -> tuple:
    return tuple(int(part.strip()) for part in text.split(","))


# key -> parser; covers the architecture plus both training stages
ARCH_SCHEMA = {
    "patch_count": int,
    "patch_size": int,
    "backbone_channels": _parse_int_tuple,
    "proj_channels": int,
    "pooled_size": int,
    "token_expansion": float,
    "channel_expansion": float,
    "depth_lq": int,
    "depth_diff": int,
    "diff_input_mode": str,
    "with_reference": _parse_bool,
}

TRAIN_SCHEMA = {
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "weight_decay": float,
    "seed": int,
    "kd_enabled": _parse_bool,
    "nar_mode": str,
    "distill_weight": float,
    "squared_distill": _parse_bool,
}

CONFIG_SCHEMA = {**ARCH_SCHEMA, **TRAIN_SCHEMA}

# keys a training config file must spell out explicitly
REQUIRED_TRAIN_KEYS = ("epochs",)


def parse_kv_text(text: str, source: str = "<config>") -> dict:
    """Parse flat key=value lines into a raw string dict."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{source}: line {lineno}: empty key")
        if key in values:
            raise ConfigError(f"{source}: line {lineno}: duplicate key {key!r}")
        values[key] = (lineno, value)
    return values


def coerce_config(raw: dict, schema: dict, source: str = "<config>") -> dict:
    """Type the raw values against the schema; unknown keys are errors."""
    typed = {}
    for key, (lineno, value) in raw.items():
        if key not in schema:
            raise ConfigError(f"{source}: line {lineno}: unknown key {key!r}")
        try:
            typed[key] = schema[key](value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{source}: line {lineno}: bad value for {key!r}: {exc}")
    return typed


def load_config_file(path, require=REQUIRED_TRAIN_KEYS) -> dict:
    """Read and type a training config file."""
    path = Path(path)
    raw = parse_kv_text(path.read_text(encoding="utf-8"), source=str(path))
    typed = coerce_config(raw, CONFIG_SCHEMA, source=str(path))
    for key in require:
        if key not in typed:
            raise ConfigError(f"{path}: missing config key {key!r}")
    return typed


def split_arch_keys(typed: dict) -> tuple:
    """Split a typed config dict into (ArchConfig kwargs, training kwargs)."""
    arch = {k: v for k, v in typed.items() if k in ARCH_SCHEMA}
    train = {k: v for k, v in typed.items() if k in TRAIN_SCHEMA}
    return arch, train


def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def format_kv_text(values: dict) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, v in values.items())


def arch_to_dict(arch: ArchConfig) -> dict:
    return {key: getattr(arch, key) for key in ARCH_SCHEMA}


def arch_from_dict(values: dict) -> ArchConfig:
    return ArchConfig(**{k: v for k, v in values.items() if k in ARCH_SCHEMA})
