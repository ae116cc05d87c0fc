"""Append-only event log with per-record CRC.

Record layout::

    4-byte big-endian payload length | payload (canonical JSON) | 4-byte CRC32

A torn or corrupted record ends the readable log; everything before it is
the longest valid prefix.
"""
from __future__ import annotations

import json
import os
import struct
import threading
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .. import canonical
from ..errors import LogCorrupt

SNAPSHOT_EVERY = 10_000
_LEN = struct.Struct(">I")


@dataclass(frozen=True)
class Event:
    seq: int
    kind: str
    t: int
    job_id: str | None = None
    payload: dict[str, Any] = field(default_factory=dict)
    wall: float = 0.0

    def to_dict(self) -> dict:
        return {"seq": self.seq, "kind": self.kind, "t": self.t, "job_id": self.job_id,
                "payload": self.payload, "wall": self.wall}

    @classmethod
    def from_dict(cls, d: dict) -> Event:
        return cls(int(d["seq"]), d["kind"], d["t"], d.get("job_id"),
                   d.get("payload") or {}, float(d.get("wall", 0.0)))

    def encode(self) -> bytes:
        return canonical.dumps_bytes(self.to_dict())

    @classmethod
    def decode(cls, payload: bytes) -> Event:
        return cls.from_dict(json.loads(payload.decode("utf-8")))


def encode_record(event: Event) -> bytes:
    payload = event.encode()
    return _LEN.pack(len(payload)) + payload + _LEN.pack(zlib.crc32(payload))


@dataclass
class LogRead:
    events: list[Event]
    valid_bytes: int
    error: LogCorrupt | None = None


def read_records(data: bytes, expect_seq: int = 1) -> LogRead:
    events: list[Event] = []
    pos = 0
    seq = expect_seq
    while pos < len(data):
        if pos + 4 > len(data):
            return LogRead(events, pos, LogCorrupt(seq, "truncated length header"))
        (n,) = _LEN.unpack_from(data, pos)
        end = pos + 4 + n + 4
        if end > len(data):
            return LogRead(events, pos, LogCorrupt(seq, "truncated record"))
        payload = data[pos + 4:pos + 4 + n]
        (crc,) = _LEN.unpack_from(data, pos + 4 + n)
        if zlib.crc32(payload) != crc:
            return LogRead(events, pos, LogCorrupt(seq, "checksum mismatch"))
        try:
            event = Event.decode(payload)
        except (ValueError, KeyError, TypeError) as exc:
            return LogRead(events, pos, LogCorrupt(seq, f"undecodable payload: {exc}"))
        if event.seq != seq:
            return LogRead(events, pos, LogCorrupt(seq, f"found seq {event.seq}"))
        events.append(event)
        seq += 1
        pos = end
    return LogRead(events, pos)


def read_log(path: str | os.PathLike) -> LogRead:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        return LogRead([], 0)
    return read_records(data)


class EventLog:
    """Single-writer append path; ``fsync`` is optional for test speed."""

    def __init__(self, path: str | os.PathLike, fsync: bool = False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.fsync = fsync
        self._lock = threading.Lock()
        self._fh = open(self.path, "ab")

    def truncate(self, size: int) -> None:
        with self._lock:
            self._fh.close()
            with open(self.path, "r+b") as fh:
                fh.truncate(size)
            self._fh = open(self.path, "ab")

    def append(self, event: Event) -> None:
        record = encode_record(event)
        with self._lock:
            self._fh.write(record)
            self._fh.flush()
            if self.fsync:
                os.fsync(self._fh.fileno())

    def close(self) -> None:
        with self._lock:
            self._fh.close()
