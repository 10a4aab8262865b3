"""CSV and JSON serialization with byte-stable round trips.

Floats are written with ``repr``, the shortest string that parses back to the
same double, so reading a file and writing it again reproduces its bytes.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParameterError


def format_float(x: float) -> str:
    return repr(float(x))


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def matrix_to_csv(a: np.ndarray) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in np.atleast_2d(a):
        writer.writerow([format_float(v) for v in row])
    return buf.getvalue()


def write_matrix_csv(path, a: np.ndarray) -> None:
    Path(path).write_text(matrix_to_csv(a))


def read_matrix_csv(path) -> np.ndarray:
    """Read a numeric CSV; a non-numeric first row is taken as a header and skipped."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows and not all(_is_number(c) for c in rows[0]):
        rows = rows[1:]
    if not rows:
        raise ParameterError(f"{path}: no numeric rows")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ParameterError(f"{path}: ragged rows")
    try:
        return np.array([[float(c) for c in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise ParameterError(f"{path}: {exc}") from exc


def read_table_csv(path) -> tuple[list[str], np.ndarray]:
    """Header + numeric body; rows are samples."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 2:
        raise ParameterError(f"{path}: need a header and at least one row")
    header = [h.strip() for h in rows[0]]
    try:
        body = np.array([[float(c) for c in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise ParameterError(f"{path}: {exc}") from exc
    if body.shape[1] != len(header):
        raise ParameterError(f"{path}: header has {len(header)} columns, body {body.shape[1]}")
    return header, body


def table_to_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(header))
    for row in rows:
        writer.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"
