"""Report documents and their deterministic JSON serialization: insertion
key order is preserved, floats carry 17 significant digits, and the config
hash is invariant to key reordering."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

__all__ = ["SCHEMA_VERSION", "ReportDocument", "dumps_stable", "config_hash"]

SCHEMA_VERSION = 1


class ReportError(ValueError):
    pass


def _format_float(x: float) -> str:
    if np.isnan(x):
        return "NaN"
    if np.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    s = format(float(x), ".17g")
    # make floats self-identifying so ints and floats never collide
    if "e" not in s and "." not in s and "n" not in s:
        s += ".0"
    return s


def _dump(obj, parts: list):
    if obj is None:
        parts.append("null")
    elif obj is True:
        parts.append("true")
    elif obj is False:
        parts.append("false")
    elif isinstance(obj, str):
        parts.append('"' + obj.replace("\\", "\\\\").replace('"', '\\"') + '"')
    elif isinstance(obj, (int, np.integer)):
        parts.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        parts.append(_format_float(float(obj)))
    elif isinstance(obj, np.ndarray):
        _dump(obj.tolist(), parts)
    elif isinstance(obj, (list, tuple)):
        parts.append("[")
        for i, item in enumerate(obj):
            if i:
                parts.append(", ")
            _dump(item, parts)
        parts.append("]")
    elif isinstance(obj, dict):
        parts.append("{")
        for i, (key, value) in enumerate(obj.items()):
            if i:
                parts.append(", ")
            if not isinstance(key, str):
                raise ReportError(f"non-string key {key!r}")
            _dump(key, parts)
            parts.append(": ")
            _dump(value, parts)
        parts.append("}")
    else:
        raise ReportError(f"unserializable value of type {type(obj).__name__}")


def dumps_stable(obj) -> str:
    """JSON text with insertion-ordered keys and 17-significant-digit
    floats; identical input produces identical bytes."""
    parts: list = []
    _dump(obj, parts)
    return "".join(parts)


def _canonical(obj):
    if isinstance(obj, dict):
        return {k: _canonical(obj[k]) for k in sorted(obj)}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    return obj


def config_hash(config_mapping) -> str:
    """sha256 of the key-sorted canonical form, so reordering keys in the
    config file does not change the hash."""
    return hashlib.sha256(dumps_stable(_canonical(config_mapping)).encode()).hexdigest()


@dataclass
class ReportDocument:
    """Ordered report payload written as JSON.

    ``body`` holds the command-specific sections; metadata (schema version,
    seed, config hash, warnings) is placed first at serialization time.
    """

    seed: int
    config: dict
    body: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def to_json(self) -> str:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "seed": int(self.seed),
            "config_hash": config_hash(self.config),
            "warnings": list(self.warnings),
        }
        doc.update(self.body)
        return dumps_stable(doc)
