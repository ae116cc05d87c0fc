"""Rebuild controller state from a snapshot plus the event log."""
from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import LogCorrupt
from .eventlog import Event, read_log
from .state import IN_FLIGHT, ControllerState, apply_event, replay


@dataclass
class Recovery:
    state: ControllerState
    error: LogCorrupt | None = None
    valid_bytes: int = 0
    requeue: list[Event] = field(default_factory=list)
    events: list[Event] = field(default_factory=list)


def load_snapshot(path: str | os.PathLike) -> ControllerState | None:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (FileNotFoundError, ValueError):
        return None
    return ControllerState.from_dict(doc["state"])


def write_snapshot(path: str | os.PathLike, state: ControllerState) -> None:
    path = Path(path)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps({"last_seq": state.last_seq, "state": state.to_dict()}),
                   encoding="utf-8")
    os.replace(tmp, path)


def recover(log_path: str | os.PathLike, snapshot_path: str | os.PathLike | None = None,
            now: int | None = None) -> Recovery:
    """Fold the longest valid log prefix, then requeue jobs that were in flight.

    Runners are never reattached: a job that was Provisioning, Running, or
    Suspended at the crash goes back to Queued via a ``requeued`` event that
    the caller should append to the log.
    """
    read = read_log(log_path)
    state = ControllerState()
    snap = load_snapshot(snapshot_path) if snapshot_path else None
    events = read.events
    if snap is not None and snap.last_seq <= len(events):
        state = snap
        events = [e for e in events if e.seq > snap.last_seq]
    state = replay(events, state)
    t = now if now is not None else (read.events[-1].t if read.events else 0)
    requeue = []
    for job_id in sorted(state.jobs):
        if state.jobs[job_id].state in IN_FLIGHT:
            ev = Event(state.last_seq + 1, "requeued", t, job_id,
                       {"reason": "controller restart"}, time.time())
            state = apply_event(state, ev)
            requeue.append(ev)
    return Recovery(state, read.error, read.valid_bytes, requeue, read.events)
