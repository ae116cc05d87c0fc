"""Controller service: event-sourced job table, scheduler ticks, wire protocol."""
from .controller import (Controller, LogLine, NodeConfig, VirtualClock, WallClock,
                         merge_log_events, parse_nodes)
from .eventlog import SNAPSHOT_EVERY, Event, EventLog, encode_record, read_log, read_records
from .recovery import Recovery, load_snapshot, recover, write_snapshot
from .server import ControllerServer, Session
from .state import (STATES, TERMINAL, TRANSITIONS, ControllerState, JobRecord, apply_event,
                    replay)

__all__ = [
    "Controller", "ControllerServer", "ControllerState", "Event", "EventLog", "JobRecord",
    "LogLine", "NodeConfig", "Recovery", "SNAPSHOT_EVERY", "STATES", "Session", "TERMINAL",
    "TRANSITIONS", "VirtualClock", "WallClock", "apply_event", "encode_record",
    "load_snapshot", "merge_log_events", "parse_nodes", "read_log", "read_records",
    "recover", "replay", "write_snapshot",
]
