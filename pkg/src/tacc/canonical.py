"""Canonical JSON text: sorted keys, no insignificant whitespace, NFC strings."""
from __future__ import annotations

import hashlib
import json
import unicodedata
from typing import Any


def nfc(value: Any) -> Any:
    if isinstance(value, str):
        return unicodedata.normalize("NFC", value)
    if isinstance(value, dict):
        return {nfc(k): nfc(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [nfc(v) for v in value]
    return value


def dumps(obj: Any) -> str:
    """Serialize ``obj`` canonically (no trailing newline)."""
    return json.dumps(nfc(obj), sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False, allow_nan=False)


def dumps_bytes(obj: Any) -> bytes:
    return dumps(obj).encode("utf-8")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
