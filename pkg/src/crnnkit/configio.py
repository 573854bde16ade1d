"""Plain-text key/value config files.

Format::

    #crnnkit-config v1 <kind>
    key = <json value>

One key per line, keys sorted, values JSON-encoded. Lines starting with ``#``
after the header are comments. Dumping a loaded file reproduces it byte for
byte.
"""
from __future__ import annotations

import dataclasses
import json

VERSION = "v1"


class ConfigError(ValueError):
    pass


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, list):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def _tupled(value):
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


def to_dict(obj) -> dict:
    return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}


def from_dict(cls, data: dict, strict: bool = True):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown and strict:
        raise ConfigError(f"unknown {cls.__name__} keys: {', '.join(unknown)}")
    kwargs = {k: _tupled(v) for k, v in data.items() if k in names}
    return cls(**kwargs)


def dumps(kind: str, data: dict) -> str:
    lines = [f"#crnnkit-config {VERSION} {kind}"]
    for key in sorted(data):
        lines.append(f"{key} = {json.dumps(_plain(data[key]), ensure_ascii=False, sort_keys=True)}")
    return "\n".join(lines) + "\n"


def loads(text: str, kind: str) -> dict:
    # only \n separates lines: JSON leaves characters such as U+0085 or
    # U+2028 unescaped, and str.splitlines would break on them
    lines = [ln[:-1] if ln.endswith("\r") else ln for ln in text.split("\n")]
    while lines and not lines[-1]:
        lines.pop()
    if not lines:
        raise ConfigError("empty config file")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "#crnnkit-config":
        raise ConfigError("missing '#crnnkit-config' header")
    if head[1] != VERSION:
        raise ConfigError(f"unsupported config version {head[1]!r}")
    if head[2] != kind:
        raise ConfigError(f"expected a {kind!r} config, found {head[2]!r}")
    out = {}
    for n, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, raw = line.partition("=")
        if not sep:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key = key.strip()
        try:
            out[key] = json.loads(raw.strip())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {n}: bad value for {key!r}: {exc}") from None
    return out


def save(path, kind: str, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps(kind, to_dict(obj)))


def load(path, kind: str, cls):
    with open(path, "r", encoding="utf-8") as f:
        return from_dict(cls, loads(f.read(), kind))
