"""Deterministic JSON/CSV writers and provenance tagging.

JSON keys are sorted, floats use the shortest round-trip repr and non-finite
values become strings.  CSV numbers use ``%.17g``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import CurvlabError

__all__ = [
    "IOFailure",
    "to_jsonable",
    "dumps_json",
    "write_json",
    "write_csv",
    "tag",
    "sha256_file",
    "PROVENANCE",
]

PROVENANCE = ("measured", "exact", "overridden", "input")


class IOFailure(CurvlabError):
    """Output could not be written or input could not be read."""

    exit_code = 3


def to_jsonable(obj):
    """Convert numpy scalars and arrays, Fractions and non-finite floats."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if isinstance(obj, Fraction):
        return str(obj)
    if obj is None or isinstance(obj, str):
        return obj
    raise TypeError("cannot serialize %r" % type(obj))


def dumps_json(obj) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj):
    try:
        Path(path).write_text(dumps_json(obj), encoding="utf-8")
    except OSError as exc:
        raise IOFailure("cannot write %s: %s" % (path, exc)) from exc


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % float(x)
    return str(x)


def write_csv(path, columns: dict):
    """Write equal-length columns ``{name: values}`` in insertion order."""
    names = list(columns)
    cols = [np.asarray(columns[n]) if not isinstance(columns[n], list) else columns[n] for n in names]
    n = len(cols[0]) if cols else 0
    if any(len(c) != n for c in cols):
        raise ValueError("CSV columns differ in length")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for i in range(n):
        w.writerow([_fmt(c[i]) for c in cols])
    try:
        Path(path).write_text(buf.getvalue(), encoding="utf-8")
    except OSError as exc:
        raise IOFailure("cannot write %s: %s" % (path, exc)) from exc


def tag(obj, default="measured", special=None, _path=""):
    """Wrap every numeric leaf as ``{"value": x, "provenance": p}``.

    ``special`` maps dotted key paths (or prefixes) to a provenance that
    overrides ``default`` below that path.
    """
    special = special or {}
    prov = default
    for key in sorted(special, key=len):
        if _path == key or _path.startswith(key + "."):
            prov = special[key]
    if isinstance(obj, dict):
        return {k: tag(v, default, special, (_path + "." + str(k)) if _path else str(k)) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)) and obj and all(isinstance(v, dict) for v in obj):
        return [tag(v, default, special, _path) for v in obj]
    if isinstance(obj, (bool, np.bool_)) or obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, (int, float, np.integer, np.floating, Fraction)):
        return {"value": obj, "provenance": prov}
    return obj


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
