"""Declarative key = value config files for training runs.

Any TrainConfig field can be set by name; `#` starts a comment. Tuple fields
take comma-separated values where `none` marks an absent entry, e.g.
`rrn_skip_taps = 1, none`. CLI flags override file values, and the
MRJL_CONFIG environment variable supplies a default file path.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .errors import ConfigurationError
from .trainer import TrainConfig

ENV_CONFIG_VAR = "MRJL_CONFIG"

_FIELD_DEFAULTS = {f.name: f.default for f in dataclasses.fields(TrainConfig)}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_DEFAULTS:
            raise ConfigurationError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = value
    return values


def parse_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file {path} does not exist")
    return parse_config_text(path.read_text(encoding="utf-8"), source=str(path))


def _convert(key: str, raw: str):
    default = _FIELD_DEFAULTS[key]
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [p.strip() for p in raw.split(",") if p.strip()]
            return tuple(None if p.lower() == "none" else int(p) for p in items)
        return raw
    except ValueError as exc:
        raise ConfigurationError(f"config key {key!r}: {exc}") from exc


def build_train_config(base: TrainConfig | None = None,
                       file_values: dict[str, str] | None = None,
                       overrides: dict[str, str] | None = None) -> TrainConfig:
    """base defaults, overlaid with file values, overlaid with CLI overrides."""
    merged = dataclasses.asdict(base) if base is not None else {}
    for source in (file_values or {}), (overrides or {}):
        for key, raw in source.items():
            if key not in _FIELD_DEFAULTS:
                raise ConfigurationError(f"unknown config key {key!r}")
            merged[key] = _convert(key, raw) if isinstance(raw, str) else raw
    from .trainer import _tupled
    return TrainConfig(**_tupled(merged)).validate()
