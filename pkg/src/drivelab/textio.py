"""Artifact text formats: CSV and JSON files with '# key=value' header lines.

Every emitted artifact carries a config_hash header so downstream commands can
refuse to mix artifacts from different runs. Floats are written with repr()
so a rerun with the same config reproduces byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


def config_hash(science: dict) -> str:
    """Stable 12-hex digest of the scientific (data-determining) config fields."""
    blob = json.dumps(science, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, columns, rows, meta: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for key, value in (meta or {}).items():
        lines.append(f"# {key}={fmt(value)}")
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def read_csv(path):
    """Returns (columns, list-of-row-lists-of-str, meta dict)."""
    meta: dict[str, str] = {}
    columns = None
    rows = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value
            continue
        if columns is None:
            columns = line.split(",")
        else:
            rows.append(line.split(","))
    if columns is None:
        raise ValueError(f"{path}: no header row")
    return columns, rows, meta


def write_json(path, obj, meta: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = dict(meta or {})
    payload.update(obj)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def require_same_hash(hashes: dict[str, str | None]) -> str | None:
    """Given {artifact: hash}, raise if two artifacts carry different hashes."""
    seen: dict[str, str] = {}
    for name, h in hashes.items():
        if h is None:
            continue
        seen[name] = h
    values = set(seen.values())
    if len(values) > 1:
        detail = ", ".join(f"{k}={v}" for k, v in sorted(seen.items()))
        raise ValueError(f"config_hash mismatch between inputs: {detail}")
    return next(iter(values)) if values else None
