"""JSON output with every float written to 17 significant digits."""

from __future__ import annotations

import json
import math

import numpy as np

__all__ = ["dumps_json", "write_json", "write_jsonl"]


def _encode(obj) -> str:
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise ValueError(f"cannot serialize non-finite float {x!r}")
        return format(x, ".17g")
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_encode(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_encode(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_json(obj) -> str:
    return _encode(obj)


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        fh.write(_encode(obj) + "\n")


def write_jsonl(rows, path) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(_encode(row) + "\n")
