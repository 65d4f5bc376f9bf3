"""Flat ``key = value`` configuration files."""

from __future__ import annotations

from pathlib import Path

from ..errors import FormatError


def parse_value(text: str):
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null"):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if "," in text:
        return [parse_value(t.strip()) for t in text.split(",") if t.strip()]
    return text


def parse_config(text: str) -> dict:
    """Parse lines of ``key = value``; ``#`` starts a comment.

    Values become bool, int, float, comma-separated lists, or strings.
    """
    out = {}
    offset = 0
    for lineno, raw in enumerate(text.splitlines(keepends=True), 1):
        line = raw.split("#", 1)[0].strip()
        if line:
            if "=" not in line:
                raise FormatError(f"line {lineno}: expected 'key = value'", offset)
            key, value = (s.strip() for s in line.split("=", 1))
            if not key:
                raise FormatError(f"line {lineno}: empty key", offset)
            out[key.replace("-", "_")] = parse_value(value)
        offset += len(raw.encode())
    return out


def load_config(path) -> dict:
    return parse_config(Path(path).read_text())
