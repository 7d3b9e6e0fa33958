"""Flat ``key=value`` config files mapped onto dataclasses."""
from __future__ import annotations

import dataclasses
import types
import typing
from pathlib import Path
from typing import Any, TypeVar

T = TypeVar("T")

_NONE = {"none", "null", ""}


def _coerce(raw: str, tp: Any, key: str) -> Any:
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        inner = [a for a in args if a is not type(None)]
        if raw.strip().lower() in _NONE:
            return None
        return _coerce(raw, inner[0], key)
    if origin is tuple:
        parts = [p for p in raw.replace("[", "").replace("]", "").replace("(", "").replace(")", "").split(",") if p.strip()]
        if args and args[-1] is Ellipsis:
            return tuple(_coerce(p.strip(), args[0], key) for p in parts)
        if len(parts) != len(args):
            raise ValueError(f"{key}: expected {len(args)} comma-separated values, got {raw!r}")
        return tuple(_coerce(p.strip(), a, key) for p, a in zip(parts, args))
    if tp is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: not a boolean: {raw!r}")
    if tp is int:
        return int(raw)
    if tp is float:
        return float(raw)
    return raw.strip()


def parse_lines(text: str) -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def read_config_file(path: str | Path) -> dict[str, str]:
    return parse_lines(Path(path).read_text())


def parse_overrides(items: list[str]) -> dict[str, str]:
    return parse_lines("\n".join(items))


def build(cls: type[T], values: dict[str, str], base: T | None = None) -> T:
    """Instantiate dataclass ``cls`` from string values; unknown keys raise."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise KeyError(f"unknown config key {unknown[0]!r}" + (f" (and {len(unknown) - 1} more)" if len(unknown) > 1 else ""))
    kwargs = {k: _coerce(v, hints[k], k) for k, v in values.items()}
    if base is not None:
        return dataclasses.replace(base, **kwargs)
    return cls(**kwargs)


def dump(obj: Any, prefix: str = "") -> str:
    lines = []
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{prefix}{f.name}={'none' if v is None else v}")
    return "\n".join(lines) + "\n"
