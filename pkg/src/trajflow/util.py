"""Canonical serialization helpers: stable JSON, fingerprints, float text."""

from __future__ import annotations

import hashlib
import json

import numpy as np


def format_float(x: float) -> str:
    """Decimal text with 17 significant digits (round-trips float64 exactly)."""
    return f"{float(x):.17g}"


def canonical_json(obj) -> str:
    """Deterministic JSON: sorted keys, no whitespace variation, floats at
    17 significant digits."""
    def normalize(o):
        if isinstance(o, dict):
            return {str(k): normalize(v) for k, v in sorted(o.items())}
        if isinstance(o, (list, tuple)):
            return [normalize(v) for v in o]
        if isinstance(o, (np.floating, float)):
            return format_float(float(o))
        if isinstance(o, (np.integer,)):
            return int(o)
        if isinstance(o, np.ndarray):
            return [normalize(v) for v in o.tolist()]
        return o
    return json.dumps(normalize(obj), sort_keys=True, separators=(",", ":"))


def fingerprint(obj) -> str:
    """sha256 hex digest of the canonical JSON form of ``obj``."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()
