"""Flat-file output: scan CSVs, resolved-config sidecars, and fit reports.

A scan CSV starts with a ``#``-prefixed preamble that is valid TOML once
the prefixes are stripped (the resolved configuration minus its
``[output]`` section and thread count, plus a ``[meta]`` table), followed
by a header row and one row per scan point::

    # experiment = "rabi"
    # ...
    duration_us,pop_g1,pop_g2,pop_e,trace
    0.0,1.0,0.0,0.0,1.0
"""

from __future__ import annotations

import csv
import io
import re
import sys
from pathlib import Path

import numpy as np
import tomli_w

from . import __version__
from .errors import SchemaError
from .fitting import fit_damped_cosine, fit_gaussian_cosine

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "POP_COLUMNS",
    "FIT_MODELS",
    "write_scan_csv",
    "write_table_csv",
    "read_scan_csv",
    "sidecar_path",
    "write_sidecar",
    "emit_fit_report",
]

POP_COLUMNS = ("pop_g1", "pop_g2", "pop_e", "trace")
FIT_MODELS = ("damped-cosine", "gaussian-cosine")
_X_COLUMN = re.compile(r"^[a-z][a-z0-9_]*_(us|mhz|ghz)$")
_CURVE_POINTS = 10


def _fmt(value) -> str:
    return repr(float(value))


def _toml_safe(value):
    if isinstance(value, dict):
        return {k: _toml_safe(v) for k, v in value.items() if v is not None}
    if isinstance(value, (list, tuple)):
        return [_toml_safe(v) for v in value]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def _preamble(settings: dict, meta: dict) -> str:
    body = dict(settings)
    body.pop("output", None)
    # worker count never changes values, so it stays out of the data file
    if "run" in body:
        body["run"] = {k: v for k, v in body["run"].items() if k != "threads"}
    body["meta"] = {"version": __version__, **meta}
    text = tomli_w.dumps(_toml_safe(body))
    return "".join(f"# {line}\n" if line else "#\n" for line in text.splitlines())


def _write(path: Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def write_scan_csv(path, scan, settings: dict, extra_meta: dict | None = None) -> Path:
    """Write ``scan`` with a preamble built from ``settings`` and scalar scan metadata."""
    meta = {k: v for k, v in scan.metadata.items()
            if isinstance(v, (int, float, str, bool)) and k != "version"}
    meta.update(extra_meta or {})
    buf = io.StringIO()
    buf.write(_preamble(settings, meta))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"{scan.scan_variable}_{scan.unit.lower()}", *POP_COLUMNS])
    for row in scan.points:
        writer.writerow([_fmt(v) for v in row])
    return _write(path, buf.getvalue())


def write_table_csv(path, columns, rows, settings: dict, extra_meta: dict | None = None) -> Path:
    buf = io.StringIO()
    buf.write(_preamble(settings, extra_meta or {}))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return _write(path, buf.getvalue())


def read_scan_csv(path):
    """Return ``(preamble dict, x column name, data array (n, 5))``.

    Raises
    ------
    SchemaError
        Header or rows do not follow the scan CSV layout.
    """
    text = Path(path).read_text(encoding="utf-8")
    comment, body = [], []
    for line in text.splitlines():
        (comment if line.startswith("#") and not body else body).append(line)
    try:
        preamble = tomllib.loads("\n".join(line[2:] if line.startswith("# ") else line[1:]
                                           for line in comment))
    except tomllib.TOMLDecodeError as exc:
        raise SchemaError(f"{path}: unreadable preamble ({exc})") from exc
    rows = list(csv.reader(body))
    if not rows:
        raise SchemaError(f"{path}: no header row")
    header, data = rows[0], rows[1:]
    if len(header) != 5 or tuple(header[1:]) != POP_COLUMNS or not _X_COLUMN.match(header[0]):
        raise SchemaError(f"{path}: expected columns <scan>_<unit>,{','.join(POP_COLUMNS)}, "
                          f"got {','.join(header)}")
    if not data:
        raise SchemaError(f"{path}: no data rows")
    try:
        values = np.array([[float(v) for v in row] for row in data])
    except ValueError as exc:
        raise SchemaError(f"{path}: non-numeric entry ({exc})") from exc
    if values.shape[1:] != (5,):
        raise SchemaError(f"{path}: ragged rows")
    return preamble, header[0], values


def sidecar_path(csv_path) -> Path:
    csv_path = Path(csv_path)
    return csv_path.with_name(csv_path.stem + ".meta.toml")


def write_sidecar(csv_path, settings: dict, results: dict | None = None) -> Path:
    """Write the full resolved configuration next to ``csv_path``.

    The file is itself a valid configuration; its ``[meta]`` table is
    ignored when loaded.
    """
    body = dict(settings)
    body["meta"] = {"version": __version__, **(results or {})}
    return _write(sidecar_path(csv_path), tomli_w.dumps(_toml_safe(body)))


def emit_fit_report(csv_path, model: str, column: str = "pop_g2"):
    """Fit ``column`` of a scan CSV and write ``<stem>.fit.txt`` and ``<stem>.fit.csv``.

    For the gaussian-cosine model the time axis is shifted by the scan's
    ``pulse_time_offset_us`` (if recorded) so the envelope refers to the
    effective free-precession time.

    Returns ``(report text, report path, curve path)``.
    """
    if model not in FIT_MODELS:
        raise ValueError(f"model must be one of {', '.join(FIT_MODELS)}")
    csv_path = Path(csv_path)
    preamble, x_name, values = read_scan_csv(csv_path)
    names = [x_name, *POP_COLUMNS]
    if column not in names[1:]:
        raise SchemaError(f"no column {column!r}")
    x = values[:, 0]
    y = values[:, names.index(column)]
    shift = 0.0
    if model == "gaussian-cosine":
        shift = float(preamble.get("meta", {}).get("pulse_time_offset_us", 0.0))
        result = fit_gaussian_cosine(x + shift, y)
    else:
        result = fit_damped_cosine(x, y)

    lines = [f"model = {model}", f"source = {csv_path.name}", f"x = {x_name}",
             f"y = {column}", f"time_shift_us = {_fmt(shift)}"]
    for name, value in result.parameters.items():
        unit = result.units.get(name, "")
        lines.append(f"{name} = {_fmt(value)}" + (f" {unit}" if unit else ""))
    if result.parameters["frequency"] > 0:
        lines.append(f"period = {_fmt(1.0 / result.parameters['frequency'])} us")
    lines += [f"residual_norm = {_fmt(result.residual_norm)}",
              f"iterations = {result.iterations}",
              f"converged = {str(result.converged).lower()}"]
    report = "\n".join(lines) + "\n"

    dense = np.linspace(x.min(), x.max(), max(200, _CURVE_POINTS * x.size))
    curve = result.curve(dense + shift)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([x_name, f"{column}_fit"])
    for a, b in zip(dense, curve):
        writer.writerow([_fmt(a), _fmt(b)])

    stem = csv_path.with_suffix("")
    report_path = _write(stem.with_name(stem.name + ".fit.txt"), report)
    curve_path = _write(stem.with_name(stem.name + ".fit.csv"), buf.getvalue())
    return report, report_path, curve_path
