"""Byte-deterministic JSON for reports: sorted keys, floats at 17 significant digits."""

import json
import math

import numpy as np


def _encode(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (np.floating, float)):
        v = float(value)
        if not math.isfinite(v):
            raise ValueError("reports must not contain NaN or Inf")
        return format(v, ".17g")
    if isinstance(value, (np.integer, int)):
        return str(int(value))
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if value is None:
        return "null"
    if isinstance(value, dict):
        for key in value:
            if not isinstance(key, str):
                raise TypeError(f"report keys must be strings, got {type(key).__name__}")
        items = (f"{json.dumps(k, ensure_ascii=False)}: {_encode(value[k])}" for k in sorted(value))
        return "{" + ", ".join(items) + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_encode(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {type(value).__name__} into a report")


def canonical_dumps(value) -> str:
    """Serialize to a single deterministic line (no trailing newline)."""
    return _encode(value)
