"""On-disk formats: point-pattern CSV, result tables and flat summaries.

All writes go to a temporary file in the target directory and are moved into
place with ``os.replace``, so readers never see a partial file.
"""
from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path

import numpy as np

FLOAT_FMT = ".17g"


class FormatError(ValueError):
    pass


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), FLOAT_FMT)
    return str(v)


def write_table(path, columns, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return atomic_write_text(path, buf.getvalue())


def read_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty file")
    return rows[0], rows[1:]


def write_patterns(path, patterns, sample_ids=None, dim: int | None = None) -> Path:
    """PointPatternFile: header ``sample_id,x1..xD``, one row per point, grouped by sample.

    Empty samples contribute no rows; ``dim`` fixes the header when every sample is empty.
    """
    patterns = [np.atleast_2d(np.asarray(p, dtype=float)) if len(p) else np.zeros((0, 0)) for p in patterns]
    dims = {p.shape[1] for p in patterns if p.size}
    if len(dims) > 1:
        raise FormatError("all patterns must share one dimension")
    if dim is not None and dims and dims != {dim}:
        raise FormatError(f"patterns have dimension {dims.pop()}, expected {dim}")
    dim = dims.pop() if dims else (dim or 1)
    ids = [str(i) for i in (sample_ids if sample_ids is not None else range(1, len(patterns) + 1))]
    if len(ids) != len(patterns) or any(not s for s in ids):
        raise FormatError("need one nonempty sample id per pattern")
    rows = ([sid, *pt] for sid, p in zip(ids, patterns) for pt in p)
    return write_table(path, ["sample_id"] + [f"x{d + 1}" for d in range(dim)], rows)


def read_patterns(path) -> tuple[list[str], list[np.ndarray]]:
    """Inverse of :func:`write_patterns`; samples come back in first-appearance order."""
    header, rows = read_table(path)
    if len(header) < 2 or header[0] != "sample_id" or header[1:] != [f"x{d + 1}" for d in range(len(header) - 1)]:
        raise FormatError(f"{path}: header must be sample_id,x1[,x2,...]")
    dim = len(header) - 1
    groups: dict[str, list] = {}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != dim + 1:
            raise FormatError(f"{path}:{lineno}: expected {dim + 1} columns, found {len(row)}")
        if not row[0]:
            raise FormatError(f"{path}:{lineno}: empty sample_id")
        try:
            x = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        if not np.all(np.isfinite(x)):
            raise FormatError(f"{path}:{lineno}: non-finite coordinate")
        groups.setdefault(row[0], []).append(x)
    return list(groups), [np.array(v, dtype=float).reshape(-1, dim) for v in groups.values()]


def read_points(path) -> np.ndarray:
    """Plain coordinate table with header ``x1..xD`` (ground sets, inducing points)."""
    header, rows = read_table(path)
    if header != [f"x{d + 1}" for d in range(len(header))] or not header:
        raise FormatError(f"{path}: header must be x1[,x2,...]")
    try:
        X = np.array([[float(v) for v in r] for r in rows], dtype=float).reshape(-1, len(header))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if not np.all(np.isfinite(X)):
        raise FormatError(f"{path}: non-finite coordinate")
    return X


def write_points(path, X) -> Path:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return write_table(path, [f"x{d + 1}" for d in range(X.shape[1])], X.tolist())


def write_summary(path, items: dict) -> Path:
    """Flat ``key = value`` text, one entry per line."""
    lines = []
    for k, v in items.items():
        if isinstance(v, (list, tuple, np.ndarray)):
            v = " ".join(_fmt(x) for x in np.ravel(v))
        else:
            v = _fmt(v)
        lines.append(f"{k} = {v}")
    return atomic_write_text(path, "\n".join(lines) + "\n")


def read_summary(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out
