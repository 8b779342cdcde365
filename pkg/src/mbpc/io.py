"""Panel file ingestion and deterministic artifact writers.

Input is a long-format panel: CSV with header ``unit,time,y,x1..xp`` or a
JSON array of records with the same field names.  Units and times may appear
in any order but must form a complete N x T grid.  Writers produce
byte-stable output (sorted JSON keys, shortest round-trip floats, fixed
newlines), so identical runs yield identical files.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .panel import PanelData


class PanelFormatError(ValueError):
    """Malformed panel input; the message carries a line or record position."""


@dataclass(frozen=True)
class PanelIndex:
    """Original unit and time labels, in the row/column order of the arrays."""

    units: tuple
    times: tuple


def _sorted_tokens(tokens: set) -> list:
    """Numeric order when every label parses as a number, else string order."""
    try:
        return sorted(tokens, key=lambda t: (float(t), str(t)))
    except (TypeError, ValueError):
        return sorted(tokens, key=str)


def _assemble(
    records: list[tuple[object, object, float, list[float], str]], p: int
) -> tuple[PanelData, PanelIndex]:
    seen: dict[tuple[str, str], str] = {}
    units: set = set()
    times: set = set()
    for unit, time, _y, _xs, where in records:
        key = (str(unit), str(time))
        if key in seen:
            raise PanelFormatError(
                f"duplicate observation for unit {unit!r}, time {time!r} ({where}; "
                f"first seen at {seen[key]})"
            )
        seen[key] = where
        units.add(unit)
        times.add(time)
    unit_order = _sorted_tokens(units)
    time_order = _sorted_tokens(times)
    n, t = len(unit_order), len(time_order)
    if len(records) != n * t:
        for unit in unit_order:
            have = {str(tm) for u, tm, *_ in records if str(u) == str(unit)}
            missing = [tm for tm in time_order if str(tm) not in have]
            if missing:
                raise PanelFormatError(
                    f"incomplete grid: unit {unit!r} is missing time {missing[0]!r} "
                    f"({len(records)} rows, expected {n}*{t})"
                )
    upos = {str(u): i for i, u in enumerate(unit_order)}
    tpos = {str(tm): i for i, tm in enumerate(time_order)}
    y = np.empty((n, t))
    x = np.empty((n, t, p))
    for unit, time, yv, xs, _where in records:
        i, s = upos[str(unit)], tpos[str(time)]
        y[i, s] = yv
        x[i, s, :] = xs
    return PanelData(y, x), PanelIndex(tuple(unit_order), tuple(time_order))


def _check_header(header: list[str]) -> int:
    fixed = ["unit", "time", "y"]
    for i, name in enumerate(fixed):
        if i >= len(header) or header[i] != name:
            got = header[i] if i < len(header) else "<nothing>"
            raise PanelFormatError(
                f"expected column {name!r} at position {i + 1}, found {got!r} (line 1)"
            )
    p = len(header) - 3
    if p < 1:
        raise PanelFormatError("no covariate columns; header must end with x1..xp (line 1)")
    for j in range(p):
        expected = f"x{j + 1}"
        if header[3 + j] != expected:
            raise PanelFormatError(
                f"expected column {expected!r} at position {4 + j}, "
                f"found {header[3 + j]!r} (line 1)"
            )
    return p


def _parse_float(token: object, column: str, where: str) -> float:
    try:
        value = float(token)  # type: ignore[arg-type]
    except (TypeError, ValueError):
        raise PanelFormatError(f"column {column!r} has non-numeric value {token!r} ({where})")
    if not np.isfinite(value):
        raise PanelFormatError(f"column {column!r} has non-finite value {token!r} ({where})")
    return value


def read_panel_csv(path: str | Path) -> tuple[PanelData, PanelIndex]:
    """Read a long-format CSV panel; errors carry 1-based line numbers."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise PanelFormatError("empty file (line 1)")
        p = _check_header([h.strip() for h in header])
        records = []
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and row[0].strip() == ""):
                continue  # ignore blank lines
            where = f"line {line_no}"
            if len(row) != p + 3:
                raise PanelFormatError(
                    f"expected {p + 3} fields, found {len(row)} ({where})"
                )
            unit, time = row[0].strip(), row[1].strip()
            yv = _parse_float(row[2].strip(), "y", where)
            xs = [_parse_float(row[3 + j].strip(), f"x{j + 1}", where) for j in range(p)]
            records.append((unit, time, yv, xs, where))
    if not records:
        raise PanelFormatError("no observations (line 2)")
    return _assemble(records, p)


def read_panel_json(path: str | Path) -> tuple[PanelData, PanelIndex]:
    """Read a JSON array of records with fields unit, time, y, x1..xp."""
    with open(path) as f:
        try:
            payload = json.load(f)
        except json.JSONDecodeError as exc:
            raise PanelFormatError(f"invalid JSON: {exc}")
    if not isinstance(payload, list) or not payload:
        raise PanelFormatError("expected a non-empty JSON array of observation records")
    first = payload[0]
    if not isinstance(first, dict):
        raise PanelFormatError("expected observation records to be JSON objects (record 1)")
    p = sum(1 for k in first if k.startswith("x"))
    if p < 1:
        raise PanelFormatError("no covariate fields; records need x1..xp (record 1)")
    expected = ["unit", "time", "y"] + [f"x{j + 1}" for j in range(p)]
    records = []
    for idx, rec in enumerate(payload, start=1):
        where = f"record {idx}"
        if not isinstance(rec, dict):
            raise PanelFormatError(f"expected a JSON object ({where})")
        for name in expected:
            if name not in rec:
                raise PanelFormatError(f"missing field {name!r} ({where})")
        extra = sorted(set(rec) - set(expected))
        if extra:
            raise PanelFormatError(f"unknown field {extra[0]!r} ({where})")
        yv = _parse_float(rec["y"], "y", where)
        xs = [_parse_float(rec[f"x{j + 1}"], f"x{j + 1}", where) for j in range(p)]
        records.append((rec["unit"], rec["time"], yv, xs, where))
    return _assemble(records, p)


def read_panel(path: str | Path) -> tuple[PanelData, PanelIndex]:
    """Dispatch on file extension: .csv or .json."""
    suffix = Path(path).suffix.lower()
    if suffix == ".csv":
        return read_panel_csv(path)
    if suffix == ".json":
        return read_panel_json(path)
    raise PanelFormatError(f"unsupported panel format {suffix!r}; use .csv or .json")


# ---------------------------------------------------------------------------
# deterministic writers
# ---------------------------------------------------------------------------


def _jsonable(obj: object) -> object:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dump_json(path: str | Path, obj: object) -> None:
    """Write JSON with sorted keys and a trailing newline (byte-stable)."""
    with open(path, "w") as f:
        json.dump(_jsonable(obj), f, indent=2, sort_keys=True)
        f.write("\n")


def format_cell(value: object) -> str:
    """Shortest round-trip text for floats; NaN spelled ``nan``."""
    if isinstance(value, (np.floating, float)):
        return repr(float(value))
    if isinstance(value, (np.integer, int)) and not isinstance(value, bool):
        return str(int(value))
    return str(value)


def write_csv(path: str | Path, header: list[str], rows: list[list]) -> None:
    """Write a CSV table with fixed newlines and round-trip float text."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(v) for v in row])
