"""Flat ``key = value`` config files.

Values are parsed as Python literals when possible (ints, floats, lists,
booleans) and kept as bare strings otherwise. ``#`` starts a comment.
"""

from __future__ import annotations

import ast
from pathlib import Path

from .errors import SpecError


def parse_value(text: str):
    text = text.strip()
    lowered = text.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_kv(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SpecError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = line.split("=", 1)
        key = key.strip()
        if not key:
            raise SpecError(f"line {lineno}: empty key")
        out[key] = parse_value(val)
    return out


def load_kv(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SpecError(f"cannot read {path}: {exc}") from None
    return parse_kv(text)


def format_kv(d: dict) -> str:
    return "".join(f"{k} = {_plain(v)!r}\n" for k, v in d.items())


def _plain(v):
    """Numpy arrays and scalars become builtin lists and numbers."""
    if hasattr(v, "tolist"):
        return v.tolist()
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v
