"""Run artifacts: manifests, metric reports, and per-epoch series files.

Every emitted file is schema-versioned and readable by the functions in
this module; writers avoid timestamps so reruns on identical inputs emit
identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
from typing import Dict, List, Sequence

SCHEMA_VERSION = 1


class ReportError(ValueError):
    """Unreadable or schema-incompatible report file."""


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path, obj) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, indent=2)
        f.write("\n")


def read_json(path):
    with open(path) as f:
        return json.load(f)


def write_series(path, columns: Dict[str, List[float]]) -> None:
    """CSV-like per-epoch series; floats keep full precision via repr."""
    names = list(columns)
    length = len(columns[names[0]]) if names else 0
    for name in names:
        if len(columns[name]) != length:
            raise ReportError(f"series column {name!r} has mismatched length")
    with open(path, "w") as f:
        f.write(f"# schema={SCHEMA_VERSION}\n")
        f.write(",".join(names) + "\n")
        for i in range(length):
            f.write(",".join(repr(float(columns[name][i])) for name in names))
            f.write("\n")


def read_series(path) -> Dict[str, List[float]]:
    with open(path) as f:
        first = f.readline().strip()
        if first != f"# schema={SCHEMA_VERSION}":
            raise ReportError(f"unsupported series schema line {first!r}")
        header = f.readline().strip()
        if not header:
            raise ReportError("series file has no header row")
        names = header.split(",")
        columns: Dict[str, List[float]] = {name: [] for name in names}
        for line in f:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(names):
                raise ReportError("series row width does not match header")
            for name, val in zip(names, parts):
                columns[name].append(float(val))
    return columns


def write_metrics(path, payload: dict) -> None:
    payload = dict(payload)
    payload["schema_version"] = SCHEMA_VERSION
    write_json(path, payload)


def read_metrics(path) -> dict:
    payload = read_json(path)
    if payload.get("schema_version") != SCHEMA_VERSION:
        raise ReportError(
            f"unsupported metrics schema {payload.get('schema_version')!r}")
    return payload


def write_manifest(path, command: str, config_echo: dict, seed,
                   inputs: Dict[str, str], outputs: Sequence[str]) -> str:
    """Record what a run consumed and produced. Inputs are content-hashed."""
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": config_echo,
        "seed": seed,
        "inputs": {name: {"path": str(p), "sha256": sha256_file(p)}
                   for name, p in inputs.items()},
        "outputs": [os.path.basename(str(p)) for p in outputs],
    }
    write_json(path, manifest)
    return path
