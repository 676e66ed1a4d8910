"""CSV readers for the solver's documented output schemas."""

import csv
from pathlib import Path

import numpy as np


class SchemaError(ValueError):
    """Input file does not match the documented column schema."""


def read_table(path):
    """Read a CSV with optional leading comment lines into column arrays."""
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"input file {path} does not exist")
    with open(path) as fh:
        rows = [r for r in csv.reader(fh)
                if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise SchemaError(f"{path}: no header row")
    header, body = rows[0], rows[1:]
    cols = {}
    for j, name in enumerate(header):
        vals = [r[j] for r in body]
        try:
            cols[name] = np.array(vals, dtype=float)
        except ValueError:
            cols[name] = np.array(vals)
    return cols, len(body)


def require_columns(cols, names, path):
    missing = [n for n in names if n not in cols]
    if missing:
        raise SchemaError(f"{path}: missing required columns: "
                          + ", ".join(missing))


def read_grid(path):
    """Read an N x N snapshot grid; raises on non-square data."""
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"input file {path} does not exist")
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append(line.split(","))
    if not rows:
        raise SchemaError(f"{path}: empty grid file")
    header, body = rows[0], rows[1:]
    try:
        grid = np.array(body, dtype=float)
    except ValueError as exc:
        raise SchemaError(f"{path}: non-numeric grid data: {exc}")
    if grid.ndim != 2 or grid.shape[0] != grid.shape[1]:
        raise SchemaError(f"{path}: expected a square grid, got {grid.shape}")
    if len(header) != grid.shape[1]:
        raise SchemaError(f"{path}: header/body width mismatch")
    return grid
