"""Plain-text table writers and readers.

Every table starts with a ``# schema=<name> v1`` line, optional ``# key=value``
metadata lines, and a comma separated header.  Floats are written with
``repr`` so a table round-trips exactly and reruns produce identical bytes.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


def fmt(value) -> str:
    """Deterministic text form of a scalar cell."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if np.isnan(v):
            return "nan"
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if value is None:
        return ""
    return str(value)


def render_table(schema: str, columns, rows, meta=None) -> str:
    buf = io.StringIO()
    buf.write(f"# schema={schema} v{SCHEMA_VERSION}\n")
    for key, val in (meta or {}).items():
        buf.write(f"# {key}={_meta_value(val)}\n")
    buf.write(",".join(columns) + "\n")
    for row in rows:
        if len(row) != len(columns):
            raise ValueError(f"row has {len(row)} cells, expected {len(columns)}")
        buf.write(",".join(fmt(c) for c in row) + "\n")
    return buf.getvalue()


def write_table(path, schema, columns, rows, meta=None) -> Path:
    path = Path(path)
    path.write_text(render_table(schema, columns, rows, meta))
    return path


def read_table(path):
    """Return ``(schema, meta, columns, rows)`` with rows as lists of strings."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# schema="):
        raise ValueError(f"{path}: missing schema line")
    schema = lines[0][len("# schema="):].rsplit(" ", 1)[0]
    meta = {}
    i = 1
    while i < len(lines) and lines[i].startswith("#"):
        key, _, val = lines[i][1:].strip().partition("=")
        meta[key] = val
        i += 1
    columns = lines[i].split(",")
    rows = [ln.split(",") for ln in lines[i + 1:] if ln]
    return schema, meta, columns, rows


def _meta_value(val) -> str:
    if isinstance(val, (list, tuple, np.ndarray)):
        return ";".join(fmt(v) for v in val)
    return fmt(val)
