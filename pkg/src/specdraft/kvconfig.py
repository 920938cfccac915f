"""Flat ``key = value`` text files used for configs and hardware specs.

One assignment per line, ``#`` starts a comment, blank lines are ignored.
Values are kept as strings; callers convert to int/float as appropriate.
"""

from __future__ import annotations

import os
from typing import Mapping


def parse_kv(text: str, origin: str = "<string>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{origin}: line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key or not value:
            raise ValueError(f"{origin}: line {lineno}: expected 'key = value', got {raw.strip()!r}")
        if key in out:
            raise ValueError(f"{origin}: line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_kv(path: str | os.PathLike) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_kv(fh.read(), origin=str(path))


def format_kv(items: Mapping[str, object]) -> str:
    return "".join(f"{key} = {value}\n" for key, value in items.items())


def write_kv(path: str | os.PathLike, items: Mapping[str, object]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_kv(items))
