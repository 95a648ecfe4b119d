"""Canonical JSON and hashing helpers.

Every artifact that participates in determinism checks (schedule files, history
lines, manifests, checkpoints) is serialized through ``dumps`` so re-exports are
byte-identical: sorted keys, compact separators, no NaN/Inf.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_hex(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()
