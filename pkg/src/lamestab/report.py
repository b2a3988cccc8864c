"""Deterministic CSV/JSON export.

Floats are written with 17 significant digits; NaN and infinities become the
strings ``"nan"``, ``"inf"`` and ``"-inf"`` in both formats.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os

import numpy as np

from .errors import InputError

SCHEMA_VERSION = 1


def fmt_float(x):
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _encode(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        s = fmt_float(obj)
        return json.dumps(s) if s in ("nan", "inf", "-inf") else s
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}"
                 for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [pad + _encode(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent=1):
    return _encode(obj, indent, 0) + "\n"


def csv_text(columns, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else v
                    for v in (row[c] for c in columns)])
    return buf.getvalue()


def export_report(out_dir, stem, summary, columns=None, rows=None):
    """Write ``<stem>.json`` (with ``schema_version``) and, given rows, ``<stem>.csv``."""
    paths = []
    try:
        os.makedirs(out_dir, exist_ok=True)
        doc = dict(summary, schema_version=SCHEMA_VERSION)
        path = os.path.join(out_dir, stem + ".json")
        with open(path, "w", newline="\n") as fh:
            fh.write(dumps(doc))
        paths.append(path)
        if rows is not None:
            path = os.path.join(out_dir, stem + ".csv")
            with open(path, "w", newline="\n") as fh:
                fh.write(csv_text(columns, rows))
            paths.append(path)
    except OSError as exc:
        raise InputError("IO_ERROR", str(exc)) from None
    return paths
