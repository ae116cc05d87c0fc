"""Controller state as a pure fold over events.

``apply_event`` never mutates its input: it returns a new state or raises
``StateConflict`` / ``SequenceGap`` and leaves the caller's state as it
was.  Every (job state, event kind) pair not listed in ``TRANSITIONS`` is a
conflict.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from ..errors import SequenceGap, StateConflict
from .eventlog import Event

STATES = ("Submitted", "Compiling", "Queued", "Provisioning", "Running", "Suspended",
          "Preempted", "Succeeded", "Failed", "Killed")
TERMINAL = frozenset({"Succeeded", "Failed", "Killed"})
ACTIVE = frozenset({"Submitted", "Compiling", "Queued", "Provisioning", "Running",
                    "Suspended", "Preempted"})
IN_FLIGHT = frozenset({"Provisioning", "Running", "Suspended"})
WAITING = frozenset({"Submitted", "Compiling", "Queued", "Preempted"})

_ANY_RUN = ("Running",)
# kind -> {from_state: to_state}; None as from_state means "job absent".
# rank_exited resolves its target from the exit codes (see _rank_exited).
TRANSITIONS: dict[str, dict[str | None, str]] = {
    "submitted": {None: "Submitted"},
    "compiled": {"Submitted": "Compiling"},
    "compile_failed": {"Submitted": "Failed", "Compiling": "Failed"},
    "enqueued": {"Compiling": "Queued", "Preempted": "Queued"},
    "provisioning": {"Queued": "Provisioning"},
    "provision_failed": {"Provisioning": "Provisioning"},
    "provisioned": {"Provisioning": "Running"},
    "requeued": {"Provisioning": "Queued", "Running": "Queued", "Suspended": "Queued"},
    "rank_started": {"Running": "Running"},
    "rank_exited": {"Running": "Running"},
    "failed": {"Compiling": "Failed", "Provisioning": "Failed", "Running": "Failed",
               "Suspended": "Failed"},
    "preempted": {"Running": "Preempted"},
    "suspended": {"Running": "Suspended"},
    "resumed": {"Suspended": "Running"},
    "killed": {"Queued": "Killed", "Running": "Killed", "Suspended": "Killed"},
}
JOB_EVENT_KINDS = tuple(TRANSITIONS)
SYSTEM_EVENT_KINDS = ("decision_applied", "backend_health", "usage_decayed", "gang_rotated")


@dataclass(frozen=True)
class JobRecord:
    job_id: str
    user: str
    spec: Mapping[str, Any]
    spec_hash: str
    bundle_id: str
    state: str = "Submitted"
    reason: str = ""
    submit_t: int = 0
    history: tuple[tuple[str, int], ...] = ()
    trace: Mapping[str, Any] | None = None
    exit_codes: tuple[tuple[int, int], ...] = ()
    backend: str = ""
    placement: tuple[str, ...] = ()
    attempted: tuple[str, ...] = ()
    runner_ids: tuple[str, ...] = ()
    start_t: int | None = None
    usage: float = 0.0
    runs: int = 0
    partition: str = ""

    @property
    def nnodes(self) -> int:
        return int(self.spec.get("nodes", 1))

    @property
    def terminal(self) -> bool:
        return self.state in TERMINAL

    def time_in(self, state: str, now: int) -> float:
        """Total seconds spent in ``state`` according to the history."""
        total = 0.0
        for i, (s, t) in enumerate(self.history):
            if s != state:
                continue
            end = self.history[i + 1][1] if i + 1 < len(self.history) else now
            total += end - t
        return total

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["history"] = [list(h) for h in self.history]
        d["exit_codes"] = [list(e) for e in self.exit_codes]
        for key in ("placement", "attempted", "runner_ids"):
            d[key] = list(d[key])
        d["spec"] = dict(self.spec)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> JobRecord:
        d = dict(d)
        d["history"] = tuple((s, t) for s, t in d.get("history", ()))
        d["exit_codes"] = tuple((int(r), int(c)) for r, c in d.get("exit_codes", ()))
        for key in ("placement", "attempted", "runner_ids"):
            d[key] = tuple(d.get(key, ()))
        return cls(**d)


@dataclass(frozen=True)
class GangRecord:
    key: str
    placement: tuple[str, ...]
    resources: Mapping[str, int]
    gangs: tuple[tuple[str, ...], ...]
    active: int = 0
    last_switch: int = 0

    def to_dict(self) -> dict:
        return {"key": self.key, "placement": list(self.placement),
                "resources": dict(self.resources), "gangs": [list(g) for g in self.gangs],
                "active": self.active, "last_switch": self.last_switch}

    @classmethod
    def from_dict(cls, d: dict) -> GangRecord:
        return cls(d["key"], tuple(d["placement"]), dict(d["resources"]),
                   tuple(tuple(g) for g in d["gangs"]), int(d["active"]),
                   d["last_switch"])


@dataclass(frozen=True)
class ControllerState:
    jobs: Mapping[str, JobRecord] = field(default_factory=dict)
    next_job_id: int = 1
    last_seq: int = 0
    usage: Mapping[str, float] = field(default_factory=dict)
    last_decay_t: int | None = None
    backend_health: Mapping[str, str] = field(default_factory=dict)
    gangs: Mapping[str, GangRecord] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "jobs": {k: v.to_dict() for k, v in sorted(self.jobs.items())},
            "next_job_id": self.next_job_id,
            "last_seq": self.last_seq,
            "usage": dict(sorted(self.usage.items())),
            "last_decay_t": self.last_decay_t,
            "backend_health": dict(sorted(self.backend_health.items())),
            "gangs": {k: v.to_dict() for k, v in sorted(self.gangs.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> ControllerState:
        return cls(
            jobs={k: JobRecord.from_dict(v) for k, v in d["jobs"].items()},
            next_job_id=int(d["next_job_id"]),
            last_seq=int(d["last_seq"]),
            usage={k: float(v) for k, v in d["usage"].items()},
            last_decay_t=d.get("last_decay_t"),
            backend_health=dict(d.get("backend_health", {})),
            gangs={k: GangRecord.from_dict(v) for k, v in d.get("gangs", {}).items()},
        )

    def job(self, job_id: str) -> JobRecord | None:
        return self.jobs.get(job_id)


def format_job_id(n: int) -> str:
    return f"{n:06d}"


# -- transitions -----------------------------------------------------------

def _transition(job: JobRecord, target: str, t: int, **changes) -> JobRecord:
    history = job.history
    if target != job.state or not history:
        history = history + ((target, t),)
    return dataclasses.replace(job, state=target, history=history, **changes)


def _leave_partition(gangs: dict[str, GangRecord], job: JobRecord) -> None:
    if not job.partition or job.partition not in gangs:
        return
    rec = gangs[job.partition]
    new_gangs, active = [], rec.active
    for i, g in enumerate(rec.gangs):
        kept = tuple(j for j in g if j != job.job_id)
        if kept:
            new_gangs.append(kept)
        elif i < rec.active:
            active -= 1
    if not new_gangs:
        del gangs[job.partition]
        return
    gangs[job.partition] = dataclasses.replace(
        rec, gangs=tuple(new_gangs), active=active % len(new_gangs))


def _charge(usage: dict[str, float], user: str, amount: float) -> None:
    if amount:
        usage[user] = usage.get(user, 0.0) + float(amount)


def _apply_job_event(state: ControllerState, ev: Event) -> ControllerState:
    kind, p, t = ev.kind, ev.payload, ev.t
    job = state.jobs.get(ev.job_id) if ev.job_id is not None else None
    current = job.state if job is not None else None
    allowed = TRANSITIONS[kind]
    if current not in allowed:
        raise StateConflict(f"{kind} not allowed in state {current or 'absent'}",
                            field=ev.job_id)
    target = allowed[current]
    jobs = dict(state.jobs)
    usage = dict(state.usage)
    gangs = dict(state.gangs)
    next_id = state.next_job_id

    if kind == "submitted":
        new = JobRecord(job_id=ev.job_id, user=p["user"], spec=dict(p["spec"]),
                        spec_hash=p["spec_hash"], bundle_id=p["bundle_id"],
                        submit_t=t, history=(("Submitted", t),))
        next_id = max(next_id, int(ev.job_id) + 1)
    elif kind == "compiled":
        new = _transition(job, target, t, trace=p.get("trace"),
                          bundle_id=p.get("bundle_id", job.bundle_id))
    elif kind in ("compile_failed", "failed"):
        new = _transition(job, target, t, reason=p.get("reason", "FAILED"),
                          usage=job.usage + float(p.get("usage", 0.0)))
        _charge(usage, job.user, p.get("usage", 0.0))
        _leave_partition(gangs, job)
    elif kind == "enqueued":
        new = _transition(job, target, t, attempted=(), placement=(), backend="",
                          runner_ids=(), exit_codes=(), partition="", start_t=None)
    elif kind == "provisioning":
        partition = ""
        gang = p.get("gang")
        if gang:
            partition = gang["partition"]
            if partition in gangs:
                rec = gangs[partition]
                gangs[partition] = dataclasses.replace(rec, gangs=rec.gangs + ((job.job_id,),))
            else:
                founder = gang["founder"]
                gangs[partition] = GangRecord(
                    partition, tuple(p["placement"]), dict(p["resources"]),
                    ((founder,), (job.job_id,)), 0, t)
                if founder in jobs:
                    jobs[founder] = dataclasses.replace(jobs[founder], partition=partition)
        new = _transition(job, target, t, placement=tuple(p["placement"]), attempted=(),
                          partition=partition)
    elif kind == "provision_failed":
        new = _transition(job, target, t, attempted=job.attempted + (p["backend"],))
        if job.trace is not None:
            trace = dict(job.trace)
            trace["factors"] = list(trace.get("factors", [])) + [{
                "layer": "execution", "factor": "fail-safe switching",
                "effect": f"{p['backend']} failed ({p.get('cause', '')}); "
                          f"next {p.get('next') or 'none'}"}]
            new = dataclasses.replace(new, trace=trace)
    elif kind == "provisioned":
        new = _transition(job, target, t, backend=p["backend"],
                          attempted=job.attempted + (p["backend"],),
                          runner_ids=tuple(p.get("runner_ids", ())), start_t=t,
                          runs=job.runs + 1, exit_codes=())
    elif kind == "requeued":
        _leave_partition(gangs, job)
        _charge(usage, job.user, p.get("usage", 0.0))
        new = _transition(job, target, t, attempted=(), placement=(), backend="",
                          runner_ids=(), exit_codes=(), partition="", start_t=None,
                          usage=job.usage + float(p.get("usage", 0.0)))
    elif kind == "rank_started":
        new = job
    elif kind == "rank_exited":
        rank, code = int(p["rank"]), int(p["code"])
        if any(r == rank for r, _ in job.exit_codes):
            raise StateConflict(f"rank {rank} already exited", field=ev.job_id)
        codes = tuple(sorted(job.exit_codes + ((rank, code),)))
        if len(codes) >= len(job.placement or ()) and job.placement:
            ok = all(c == 0 for _, c in codes)
            amount = float(p.get("usage", 0.0))
            _charge(usage, job.user, amount)
            _leave_partition(gangs, job)
            new = _transition(job, "Succeeded" if ok else "Failed", t, exit_codes=codes,
                              reason="" if ok else "EXIT_NONZERO",
                              usage=job.usage + amount)
        else:
            new = dataclasses.replace(job, exit_codes=codes)
    elif kind in ("preempted", "killed"):
        amount = float(p.get("usage", 0.0))
        _charge(usage, job.user, amount)
        _leave_partition(gangs, job)
        new = _transition(job, target, t, usage=job.usage + amount,
                          reason="" if kind == "preempted" else p.get("reason", ""))
    elif kind in ("suspended", "resumed"):
        new = _transition(job, target, t)
    else:  # pragma: no cover - TRANSITIONS and this chain are kept in step
        raise StateConflict(f"unhandled kind {kind}")
    jobs[new.job_id] = new
    return dataclasses.replace(state, jobs=jobs, usage=usage, gangs=gangs,
                               next_job_id=next_id, last_seq=ev.seq)


def _apply_system_event(state: ControllerState, ev: Event) -> ControllerState:
    p = ev.payload
    if ev.kind == "decision_applied":
        return dataclasses.replace(state, last_seq=ev.seq)
    if ev.kind == "backend_health":
        health = dict(state.backend_health)
        health[p["backend"]] = p["health"]
        return dataclasses.replace(state, backend_health=health, last_seq=ev.seq)
    if ev.kind == "usage_decayed":
        factor = 0.5 ** (float(p["dt"]) / float(p["half_life"]))
        usage = {u: v * factor for u, v in state.usage.items()}
        return dataclasses.replace(state, usage=usage, last_decay_t=ev.t, last_seq=ev.seq)
    if ev.kind == "gang_rotated":
        gangs = dict(state.gangs)
        rec = gangs.get(p["partition"])
        if rec is None:
            raise StateConflict(f"unknown gang partition {p['partition']}")
        gangs[rec.key] = dataclasses.replace(rec, active=int(p["active"]) % len(rec.gangs),
                                             last_switch=ev.t)
        return dataclasses.replace(state, gangs=gangs, last_seq=ev.seq)
    raise StateConflict(f"unknown event kind {ev.kind!r}")


def apply_event(state: ControllerState, ev: Event) -> ControllerState:
    if ev.seq != state.last_seq + 1:
        raise SequenceGap(f"expected seq {state.last_seq + 1}, got {ev.seq}")
    if ev.kind in TRANSITIONS:
        if ev.job_id is None:
            raise StateConflict(f"{ev.kind} needs a job id")
        return _apply_job_event(state, ev)
    return _apply_system_event(state, ev)


def replay(events: Iterable[Event], state: ControllerState | None = None) -> ControllerState:
    state = state if state is not None else ControllerState()
    for ev in events:
        state = apply_event(state, ev)
    return state
