"""Line-oriented ``key = value`` configuration files.

Keys carry a dotted section prefix (``block.d = 32``, ``train.lr = 1e-3``).
Blank lines and ``#`` comments are ignored. Unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
import typing
from pathlib import Path

from .errors import ConfigError


def parse_lines(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def read_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}", str(path))
    return parse_lines(path.read_text(), str(path))


def parse_override(item: str) -> tuple[str, str]:
    if "=" not in item:
        raise ConfigError(f"override must look like key=value, got {item!r}", item)
    key, value = (part.strip() for part in item.split("=", 1))
    return key, value


def format_lines(values: dict[str, object]) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, v in values.items())


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


_TRUE = {"true", "on", "yes", "1"}
_FALSE = {"false", "off", "no", "0"}


def coerce(value: str, typ, key: str):
    """Convert ``value`` to the annotated field type ``typ``."""
    origin = typing.get_origin(typ)
    if origin is typing.Union or (origin is not None and type(None) in typing.get_args(typ)):
        args = [a for a in typing.get_args(typ) if a is not type(None)]
        if value.lower() in ("none", "null", ""):
            return None
        return coerce(value, args[0], key)
    try:
        if typ is bool:
            low = value.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(value)
        if typ is int:
            return int(value)
        if typ is float:
            return float(value)
        if typ is str:
            return value
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {value!r}", key) from exc
    raise ConfigError(f"unsupported field type for {key!r}", key)


def build_dataclass(cls, values: dict[str, str], prefix: str):
    """Instantiate ``cls`` from string values keyed ``prefix.field``."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in values.items():
        name = key[len(prefix) + 1:] if key.startswith(prefix + ".") else None
        if name is None:
            continue
        if name not in names:
            raise ConfigError(f"unknown config key {key!r}", key)
        kwargs[name] = coerce(raw, hints[name], key)
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(str(exc), f"{prefix}.{exc.key}" if exc.key else None) from exc
