"""Strict-header CSV ingestion and units-annotated CSV output."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import SchemaError


def _data_lines(text: str):
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        yield lineno, line


def read_columns(source, header: Sequence[str], text_columns: Iterable[str] = ()) -> dict[str, np.ndarray]:
    """Read a comma-separated file whose first data line is exactly ``header``.

    ``source`` is a path or the file contents. Blank and ``#`` lines are
    skipped. Columns not listed in ``text_columns`` are parsed as float.
    """
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).exists()):
        text = Path(source).read_text(encoding="utf-8")
        where = str(source)
    else:
        text = source
        where = "<text>"
    lines = list(_data_lines(text))
    if not lines:
        raise SchemaError(f"{where}: empty file")
    lineno, head = lines[0]
    got = [h.strip() for h in next(csv.reader([head]))]
    if got != list(header):
        raise SchemaError(f"{where}:{lineno}: expected header {','.join(header)!r}, got {','.join(got)!r}")
    text_columns = set(text_columns)
    cols: dict[str, list] = {h: [] for h in header}
    for lineno, line in lines[1:]:
        row = [c.strip() for c in next(csv.reader([line]))]
        if len(row) != len(header):
            raise SchemaError(f"{where}:{lineno}: expected {len(header)} fields, got {len(row)}")
        for h, cell in zip(header, row):
            if h in text_columns:
                cols[h].append(cell)
                continue
            try:
                cols[h].append(float(cell))
            except ValueError:
                raise SchemaError(f"{where}:{lineno}: column {h!r} is not numeric: {cell!r}") from None
    return {h: (np.array(v, dtype=object) if h in text_columns else np.array(v, dtype=float))
            for h, v in cols.items()}


def read_scalars(path) -> dict[str, float]:
    """``key=value`` lines (sidecar files); ``#`` comments allowed."""
    out = {}
    for lineno, line in _data_lines(Path(path).read_text(encoding="utf-8")):
        if "=" not in line:
            raise SchemaError(f"{path}:{lineno}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = float(v)
    return out


def fmt_num(x) -> str:
    if isinstance(x, str):
        return x
    if x is None:
        return ""
    return repr(float(x))


def write_table(header: Sequence[str], units: Sequence[str], rows: Iterable[Sequence]) -> str:
    """CSV text with a column-name row followed by a units row."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerow(units)
    for row in rows:
        w.writerow([fmt_num(x) for x in row])
    return buf.getvalue()
