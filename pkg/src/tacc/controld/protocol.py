"""Wire framing shared by the controller and the client.

Control frames are single lines of UTF-8 JSON::

    {"id": "3", "type": "SUBMIT", "payload": {...}}\\n

A binary frame (object upload, fetch archive) follows its control frame
directly: 32-byte raw digest, 8-byte big-endian length, then the bytes.
"""
from __future__ import annotations

import hashlib
import json
import struct
from typing import BinaryIO

from ..errors import ProtocolError

VERSION = 1
MAX_LINE = 64 * 1024 * 1024
MAX_BINARY = 8 * 1024 * 1024 * 1024
_LEN = struct.Struct(">Q")

REQUEST_TYPES = ("HELLO", "CAS_CHECK", "CAS_PUT", "SUBMIT", "LIST", "STATUS", "LOGS",
                 "FETCH", "KILL")


def encode_frame(frame_id: str, ftype: str, payload: dict) -> bytes:
    body = {"id": str(frame_id), "type": ftype, "payload": payload}
    return json.dumps(body, ensure_ascii=False, separators=(",", ":")).encode("utf-8") + b"\n"


def write_frame(wfile: BinaryIO, frame_id: str, ftype: str, payload: dict) -> None:
    wfile.write(encode_frame(frame_id, ftype, payload))
    wfile.flush()


def read_frame(rfile: BinaryIO) -> dict | None:
    """Next control frame, or None on a clean end of stream."""
    line = rfile.readline(MAX_LINE + 1)
    if not line:
        return None
    if len(line) > MAX_LINE or not line.endswith(b"\n"):
        raise ProtocolError("frame too long or truncated")
    try:
        frame = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise ProtocolError(f"malformed frame: {exc}") from None
    if (not isinstance(frame, dict) or not isinstance(frame.get("type"), str)
            or not isinstance(frame.get("payload", {}), dict)):
        raise ProtocolError("frame must be an object with type and payload")
    frame.setdefault("payload", {})
    frame["id"] = str(frame.get("id", ""))
    return frame


def write_binary(wfile: BinaryIO, data: bytes, digest: bytes | None = None) -> None:
    digest = digest if digest is not None else hashlib.sha256(data).digest()
    if len(digest) != 32:
        raise ProtocolError("binary frame digest must be 32 bytes")
    wfile.write(digest + _LEN.pack(len(data)))
    wfile.write(data)
    wfile.flush()


def _read_exact(rfile: BinaryIO, n: int) -> bytes:
    chunks, left = [], n
    while left:
        chunk = rfile.read(left)
        if not chunk:
            raise ProtocolError("stream ended inside a binary frame")
        chunks.append(chunk)
        left -= len(chunk)
    return b"".join(chunks)


def read_binary(rfile: BinaryIO, verify: bool = True) -> tuple[str, bytes]:
    """Read one binary frame; returns (hex digest, bytes)."""
    head = _read_exact(rfile, 40)
    digest, (size,) = head[:32], _LEN.unpack(head[32:])
    if size > MAX_BINARY:
        raise ProtocolError(f"binary frame of {size} bytes exceeds limit")
    data = _read_exact(rfile, size)
    if verify and hashlib.sha256(data).digest() != digest:
        raise ProtocolError("binary frame digest mismatch")
    return digest.hex(), data


def error_payload(code: str, message: str) -> dict:
    return {"error": {"code": code, "message": message}}
