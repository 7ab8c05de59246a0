"""Flat ``key = value`` config files mapped onto dataclasses.

Blank lines and lines starting with ``#`` are ignored. Keys are the field
names of the target dataclass; tuple-valued fields are comma separated.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from pathlib import Path
from typing import Any, Iterable, Mapping, TypeVar

T = TypeVar("T")


class ConfigError(ValueError):
    pass


def parse_flat_config(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{n}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{n}: duplicate key {key!r}")
        out[key] = value
    return out


def load_flat_config(path) -> dict[str, str]:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_flat_config(text, str(p))


def _convert(name: str, tp: Any, value: str):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value.lower() in ("", "none"):
            return None
        return _convert(name, args[0], value)
    if origin is tuple:
        inner = typing.get_args(tp)[0]
        return tuple(_convert(name, inner, v.strip()) for v in value.split(",") if v.strip())
    try:
        if tp is bool:
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if tp is int:
            return int(value)
        if tp is float:
            return float(value)
    except ValueError:
        raise ConfigError(f"bad value for {name!r}: {value!r}") from None
    return value


def build_config(cls: type[T], values: Mapping[str, str], *,
                 ignore: Iterable[str] = (), **overrides) -> T:
    """Instantiate ``cls`` from string values; unknown keys raise ConfigError naming the key."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    ignore = set(ignore)
    kwargs = {}
    for key, value in values.items():
        if key not in names:
            if key in ignore:
                continue
            raise ConfigError(f"unknown config key {key!r}")
        kwargs[key] = _convert(key, hints[key], value)
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def config_keys(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def dump_flat_config(obj) -> str:
    lines = []
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
