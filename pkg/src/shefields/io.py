"""Serialization with round-trip float formatting.

Every float is written with 17 significant digits so data files reproduce
bit-identically and parse back to the same doubles.  Non-finite floats become
``null`` in JSON and ``nan``/``inf``/``-inf`` in CSV.
"""

from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path

import numpy as np


def fmt_float(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _plain(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        if hasattr(obj, "to_dict"):
            return _plain(obj.to_dict())
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _encode(obj, indent, level):
    pad = "\n" + " " * (indent * (level + 1)) if indent else ""
    end = "\n" + " " * (indent * level) if indent else ""
    sep = "," + pad if indent else ","
    if obj is None or isinstance(obj, bool):
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return fmt_float(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = (json.dumps(k, ensure_ascii=False) + ": " + _encode(v, indent, level + 1) for k, v in sorted(obj.items()))
        return "{" + pad + sep.join(items) + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        return "[" + pad + sep.join(_encode(v, indent, level + 1) for v in obj) + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_json(obj, indent=2) -> str:
    """Canonical JSON: sorted keys, 17-digit floats, trailing newline."""
    return _encode(_plain(obj), indent, 0) + "\n"


def write_json(obj, path):
    Path(path).write_text(dumps_json(obj), encoding="utf-8")
    return Path(path)


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt_float(v)
    if v is None:
        return ""
    s = str(v)
    if any(ch in s for ch in ',"\n'):
        s = '"' + s.replace('"', '""') + '"'
    return s


def write_csv(path, header, rows, comments=()):
    """UTF-8, comma separated, ``#``-prefixed comment lines before the header."""
    lines = [f"# {c}" for c in comments]
    lines.append(",".join(header))
    lines.extend(",".join(_cell(v) for v in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return Path(path)


_WORDS = {"true": 1.0, "false": 0.0, "": math.nan}


def read_csv(path):
    """Inverse of :func:`write_csv` for numeric tables: ``(comments, header, array)``.

    Booleans read as 1/0 and empty cells as NaN.
    """
    comments, rows, header = [], [], None
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            comments.append(line[1:].strip())
        elif header is None:
            header = line.split(",")
        elif line:
            rows.append([_WORDS[v] if v in _WORDS else float(v) for v in line.split(",")])
    return comments, header, np.array(rows)


def write_snapshot_csv(snapshot, path):
    g = snapshot.grid
    comments = [
        f"provenance={snapshot.provenance.label()}",
        f"noise_seed={snapshot.noise_seed}",
        f"time={fmt_float(snapshot.time)}",
        f"nx={g.nx} length={fmt_float(g.length)} dt={fmt_float(g.dt)} nt={g.nt}",
    ]
    return write_csv(path, ["x", "value"], zip(snapshot.x, snapshot.values), comments)
