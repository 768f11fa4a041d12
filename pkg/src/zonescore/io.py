"""File plumbing: CSV tables with comment-line metadata headers, JSON-lines, hashing."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

from . import __version__

FLOAT_FORMAT = ".10g"


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def sha256_tree(path: str | Path) -> str:
    """Hash a file, or every file under a directory keyed by relative path."""
    path = Path(path)
    if path.is_file():
        return sha256_file(path)
    h = hashlib.sha256()
    for p in sorted(q for q in path.rglob("*") if q.is_file()):
        h.update(p.relative_to(path).as_posix().encode())
        h.update(b"\0")
        h.update(sha256_file(p).encode())
    return h.hexdigest()


def format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return format(value, FLOAT_FORMAT)
    if hasattr(value, "item") and not isinstance(value, (str, bytes)):
        return format_value(value.item())
    return str(value)


def metadata_lines(seed: int | None = None, inputs: Mapping[str, str] | None = None) -> list[str]:
    lines = [f"zonescore {__version__}"]
    if seed is not None:
        lines.append(f"seed: {seed}")
    for name, digest in sorted((inputs or {}).items()):
        lines.append(f"input {name} sha256 {digest}")
    return lines


def write_table(
    path: str | Path,
    header: Sequence[str],
    rows: Iterable[Sequence[Any] | Mapping[str, Any]],
    meta: Sequence[str] | None = None,
) -> Path:
    """Write a CSV whose leading ``#`` lines carry provenance metadata."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in meta if meta is not None else metadata_lines():
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            if isinstance(row, Mapping):
                row = [row.get(col) for col in header]
            writer.writerow([format_value(v) for v in row])
    return path


def _data_lines(fh) -> Iterator[str]:
    for line in fh:
        if line.startswith("#"):
            continue
        yield line


def read_table(path: str | Path) -> list[dict[str, str]]:
    """Read a CSV written by :func:`write_table` (or any plain CSV) into dicts."""
    with open(path, newline="", encoding="utf-8") as fh:
        return [dict(r) for r in csv.DictReader(_data_lines(fh))]


def parse_float(text: str | None) -> float | None:
    if text is None:
        return None
    text = text.strip()
    if text == "" or text.lower() in {"na", "nan", "none", "null"}:
        return None
    value = float(text)
    return None if math.isnan(value) else value


def write_jsonl(path: str | Path, records: Iterable[Mapping[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False))
            fh.write("\n")
    return path


def read_jsonl(path: str | Path) -> list[dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
