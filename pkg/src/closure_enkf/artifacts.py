"""CSV/JSON writers and the run-summary schema."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import jsonschema
import numpy as np

SCHEMA_VERSION = "1.0"


def fmt(value) -> str:
    """Shortest round-trip text for a float (``repr``); ints and strings pass through."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


_BOOL_TEXT = {"true": 1.0, "false": 0.0}


def read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    """Header and numeric body of a CSV written by :func:`write_csv` (booleans read as 0/1)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    body = [[_BOOL_TEXT[v] if v in _BOOL_TEXT else float(v) for v in r] for r in rows[1:]]
    return rows[0], np.array(body, dtype=float).reshape(len(rows) - 1, -1)


def jsonable(obj):
    """Recursively convert numpy values; non-finite floats become ``None``."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(jsonable(data), indent=2, sort_keys=True, allow_nan=False)
    path.write_text(text + "\n")


def read_json(path: Path):
    return json.loads(Path(path).read_text())


_number = {"type": ["number", "null"]}

RUN_SUMMARY_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "kind", "name", "seed", "config", "grid", "basis", "per_time",
                 "metrics", "files", "wall_clock_seconds"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "kind": {"enum": ["filter", "experiment"]},
        "name": {"type": "string"},
        "seed": {"type": "integer"},
        "config": {"type": "object"},
        "grid": {
            "type": "object",
            "required": ["extent", "count"],
            "properties": {"extent": {"type": "array"}, "count": {"type": "array"}},
        },
        "basis": {"type": "object", "required": ["kind", "n_bases"]},
        "per_time": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["time", "innovation_norm", "nll_term", "coverage", "closure_file"],
                "properties": {
                    "time": {"type": "number"},
                    "innovation_norm": _number,
                    "nll_term": _number,
                    "coverage": {"type": "number", "minimum": 0, "maximum": 1},
                    "closure_file": {"type": "string"},
                },
            },
        },
        "metrics": {
            "type": "object",
            "required": ["l2_error", "nll", "min_coverage"],
            "properties": {"l2_error": _number, "nll": _number, "min_coverage": _number},
        },
        "prior_comparison": {"type": "object"},
        "files": {"type": "array", "items": {"type": "string"}},
        "wall_clock_seconds": {"type": "number", "minimum": 0},
    },
}

SEARCH_SUMMARY_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "kind", "name", "seed", "sigma_grid", "num_bases_grid",
                 "argmin_nll", "argmin_l2", "files"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "kind": {"const": "search"},
        "argmin_nll": {"type": "object", "required": ["sigma", "num_bases"]},
        "argmin_l2": {"type": "object", "required": ["sigma", "num_bases"]},
    },
}


def validate_summary(data, schema=RUN_SUMMARY_SCHEMA) -> None:
    jsonschema.validate(data, schema)
