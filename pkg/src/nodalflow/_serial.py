"""JSON helpers: numpy-aware, deterministic serialization."""

from __future__ import annotations

import json

import numpy as np


def jsonable(obj):
    """Coerce numpy scalars and arrays for json.dump's default hook."""
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def dumps(payload, **kw) -> str:
    kw.setdefault("sort_keys", True)
    return json.dumps(payload, default=jsonable, **kw)
