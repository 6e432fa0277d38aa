"""Flat ``key = value`` text configs used by the CLI and the data generator."""
from __future__ import annotations

from .errors import FormatViolation
from .store import _read_file, _write_file


def parse_kv_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, blanks skipped."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatViolation(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise FormatViolation(f"{source}:{lineno}: empty key")
        if key in out:
            raise FormatViolation(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def format_kv(mapping: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in mapping.items())


def read_kv(path) -> dict[str, str]:
    return parse_kv_text(_read_file(path).decode("utf-8"), source=str(path))


def write_kv(mapping: dict, path) -> None:
    _write_file(path, format_kv(mapping).encode("utf-8"))


def parse_bool(value: str, key: str) -> bool:
    low = value.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise FormatViolation(f"{key}: cannot parse {value!r} as a boolean")
