"""The controller: submissions in, scheduler ticks, supervision, logs out.

Every mutation goes through ``_emit``, which appends one event to the log
and folds it into ``self.state``.  Backend handles and log lines are the
only live data kept outside the event-sourced state; neither survives a
restart (in-flight jobs are requeued on recovery).
"""
from __future__ import annotations

import io
import json
import logging
import tarfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

from ..bundle import BundleManifest, gc as cas_gc, load_manifest
from ..cas import ObjectStore
from ..errors import (BackendUnavailable, MissingObject, NotFound, ProvisionFailed,
                      QuotaExceeded, SchemaInvalid, StateConflict, Unsatisfiable)
from ..exec import (PreemptAck, ProvisionRequest, Registry, RuntimeChars, SelectionRules,
                    SelectionTrace, StaticChars, TaskEvent, TaskHandle, failover,
                    guess_language, select_backend)
from ..schema import (ClusterLimits, ResourceReq, parse_task_spec, spec_from_dict,
                      spec_hash_hex, validate)
from ..sched import (AccountState, Allocation, ClusterState, GangPartition, NodeState, Policy,
                     QueueEntry, ScheduleDecision, check_queue_quota, compute_priority,
                     order_queue, schedule_cycle, usage_rate)
from .eventlog import SNAPSHOT_EVERY, Event, EventLog
from .recovery import recover, write_snapshot
from .state import (WAITING, ControllerState, JobRecord, apply_event,
                    format_job_id)

log = logging.getLogger(__name__)


class VirtualClock:
    virtual = True

    def __init__(self, start: int = 0):
        self._t = start
        self._lock = threading.Lock()

    def now(self) -> int:
        with self._lock:
            return self._t

    def advance(self, dt: int = 1) -> int:
        with self._lock:
            self._t += dt
            return self._t


class WallClock:
    virtual = False

    def now(self) -> int:
        return int(time.time())

    def advance(self, dt: int = 1) -> int:
        return self.now()


@dataclass(frozen=True)
class NodeConfig:
    name: str
    capacity: ResourceReq


def parse_nodes(text: str) -> list[NodeConfig]:
    """``name:cpus:gpus:mem_mib`` entries, comma separated."""
    nodes = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        name, cpus, gpus, mem = item.split(":")
        nodes.append(NodeConfig(name, ResourceReq(int(cpus), int(gpus), int(mem))))
    return nodes


@dataclass(frozen=True)
class LogLine:
    seq: int
    ts: float
    rank: int
    stream: str
    line: str

    def to_dict(self) -> dict:
        return {"seq": self.seq, "ts": self.ts, "rank": self.rank, "stream": self.stream,
                "line": self.line}


def merge_log_events(events: Iterable[TaskEvent]) -> list[TaskEvent]:
    """Order per-rank log events by (timestamp, rank, per-rank sequence)."""
    return sorted((e for e in events if e.kind == "log"), key=lambda e: (e.ts, e.rank, e.seq))


class Controller:
    def __init__(self, nodes: Sequence[NodeConfig], registry: Registry, store: ObjectStore,
                 policy: Policy = Policy(), clock=None, state_dir: str | Path | None = None,
                 rules: SelectionRules = SelectionRules(), probe_interval_s: int = 30,
                 workdir_retention_s: int = 86_400,
                 observer: Callable[[Event, ControllerState], None] | None = None,
                 fsync: bool = False):
        self.nodes = sorted(nodes, key=lambda n: n.name)
        self.limits = ClusterLimits.from_capacities(n.capacity for n in self.nodes)
        self.registry = registry
        self.store = store
        self.policy = policy
        self.clock = clock or VirtualClock()
        self.rules = rules
        self.probe_interval_s = probe_interval_s
        self.workdir_retention_s = workdir_retention_s
        self.observer = observer
        self.state = ControllerState()
        self.events: list[Event] = []
        self.state_dir = Path(state_dir) if state_dir else None
        self.log: EventLog | None = None
        if self.state_dir:
            self.state_dir.mkdir(parents=True, exist_ok=True)
            (self.state_dir / "logs").mkdir(exist_ok=True)
            self.log = EventLog(self.state_dir / "events.log", fsync=fsync)
        self._lock = threading.RLock()
        self._tick_lock = threading.Lock()
        self._log_cond = threading.Condition()
        self._wake = threading.Event()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._t = self.clock.now()
        self.handles: dict[str, tuple[str, TaskHandle]] = {}
        self.logs: dict[str, list[LogLine]] = {}
        self._stopping: set[str] = set()
        self._manifests: dict[str, BundleManifest] = {}
        self._last_probe: dict[str, int] = {}

    # -- construction from disk ---------------------------------------------
    @classmethod
    def open(cls, state_dir: str | Path, *args, **kwargs) -> Controller:
        """Start a controller over an existing state directory, recovering state."""
        state_dir = Path(state_dir)
        rec = recover(state_dir / "events.log", state_dir / "snapshot.json",
                      now=(kwargs.get("clock") or VirtualClock()).now())
        ctl = cls(*args, state_dir=state_dir, **kwargs)
        if rec.error is not None:
            log.warning("event log corrupt at seq %s; truncating to last valid record",
                        rec.error.seq)
            ctl.log.truncate(rec.valid_bytes)
        ctl.recovery_error = rec.error
        ctl.events = list(rec.events)
        for ev in rec.requeue:
            ctl.log.append(ev)
            ctl.events.append(ev)
        ctl.state = rec.state
        ctl._load_logs()
        return ctl

    recovery_error = None

    def _load_logs(self) -> None:
        for path in sorted((self.state_dir / "logs").glob("*.jsonl")):
            lines = []
            for raw in path.read_text(encoding="utf-8").splitlines():
                d = json.loads(raw)
                lines.append(LogLine(d["seq"], d["ts"], d["rank"], d["stream"], d["line"]))
            self.logs[path.stem] = lines

    # -- event append path ----------------------------------------------------
    def _emit(self, kind: str, job_id: str | None = None, **payload) -> Event:
        ev = Event(self.state.last_seq + 1, kind, self._t, job_id, payload, time.time())
        ev = Event.decode(ev.encode())
        new_state = apply_event(self.state, ev)
        if self.log is not None:
            self.log.append(ev)
        self.events.append(ev)
        self.state = new_state
        if self.state_dir and ev.seq % SNAPSHOT_EVERY == 0:
            write_snapshot(self.state_dir / "snapshot.json", new_state)
        if self.observer is not None:
            self.observer(ev, new_state)
        return ev

    # -- submission -------------------------------------------------------------
    def manifest(self, bundle_id: str) -> BundleManifest:
        m = self._manifests.get(bundle_id)
        if m is None:
            m = self._manifests[bundle_id] = load_manifest(self.store, bundle_id)
        return m

    def accounts(self) -> dict[str, AccountState]:
        users = {j.user for j in self.state.jobs.values()} | set(self.policy.shares)
        return {u: AccountState(u, self.policy.share_for(u), self.state.usage.get(u, 0.0),
                                self.policy.quota_for(u)) for u in sorted(users)}

    def submit(self, spec_doc: str | bytes, bundle_id: str) -> str:
        spec = parse_task_spec(spec_doc)
        report = validate(spec, self.limits)
        if not report.ok:
            err = report.errors[0]
            exc = Unsatisfiable if err.code == "UNSATISFIABLE" else SchemaInvalid
            raise exc(err.message, field=err.field_path)
        manifest = self.manifest(bundle_id)
        if manifest.spec_hash != spec_hash_hex(spec):
            raise SchemaInvalid("bundle was built from a different task description",
                                field="manifest")
        for digest, _ in manifest.objects():
            if not self.store.has(digest):
                raise MissingObject(digest)
        static = StaticChars(guess_language(spec.entrypoint), manifest.total_bytes)
        runtime = RuntimeChars(spec.walltime_estimate_s)
        with self._lock:
            self._t = self.clock.now()
            queued = sum(1 for j in self.state.jobs.values()
                         if j.user == spec.user and j.state in WAITING)
            acct = AccountState(spec.user, self.policy.share_for(spec.user),
                                quota=self.policy.quota_for(spec.user))
            verdict = check_queue_quota(acct, queued)
            if not verdict:
                raise QuotaExceeded(verdict.reason, field="user")
            job_id = format_job_id(self.state.next_job_id)
            self._emit("submitted", job_id, user=spec.user, spec=spec.to_dict(),
                       spec_hash=manifest.spec_hash, bundle_id=bundle_id)
            try:
                trace = select_backend(spec, static, runtime, self.registry, self.rules)
            except BackendUnavailable as exc:
                self._emit("compile_failed", job_id, reason=f"BACKEND_UNAVAILABLE: {exc.message}")
                return job_id
            self._emit("compiled", job_id, bundle_id=bundle_id, trace=trace.to_dict())
            self._emit("enqueued", job_id)
        self._wake.set()
        return job_id

    # -- scheduler tick -------------------------------------------------------------
    def tick(self, now: int | None = None) -> ScheduleDecision:
        with self._tick_lock:
            with self._lock:
                self._t = now if now is not None else self.clock.now()
                t = self._t
                self._decay(t)
                self._probe(t)
                self._poll_all(t)
                self._gang_housekeeping(t)
                queue, cluster, accounts, partitions = self._snapshot(t)
            decision = schedule_cycle(queue, cluster, accounts, self.policy, partitions)
            self._apply(decision, t)
            return decision

    def _decay(self, t: int) -> None:
        last = self.state.last_decay_t
        if last is None or t > last:
            self._emit("usage_decayed", dt=0 if last is None else t - last,
                       half_life=self.policy.half_life_s)

    def _probe(self, t: int) -> None:
        for name in self.registry.names():
            if self.registry.healthy(name):
                continue
            if t - self._last_probe.get(name, t) < self.probe_interval_s:
                self._last_probe.setdefault(name, t)
                continue
            self._last_probe[name] = t
            if self.registry.backend(name).probe():
                self.registry.set_health(name, "up")
                self._emit("backend_health", backend=name, health="up")

    def _usage(self, job: JobRecord, runtime_s: float) -> float:
        res = ResourceReq.from_dict(job.spec["resources"])
        return runtime_s * job.nnodes * usage_rate(res.cpus, res.gpus)

    def _record_logs(self, job_id: str, events: Iterable[TaskEvent]) -> None:
        merged = merge_log_events(events)
        if not merged:
            return
        with self._log_cond:
            lines = self.logs.setdefault(job_id, [])
            new = []
            for e in merged:
                line = LogLine(len(lines) + 1, e.ts, e.rank, e.stream, e.text)
                lines.append(line)
                new.append(line)
            if self.state_dir:
                with open(self.state_dir / "logs" / f"{job_id}.jsonl", "a",
                          encoding="utf-8") as fh:
                    for line in new:
                        fh.write(json.dumps(line.to_dict()) + "\n")
            self._log_cond.notify_all()

    def _absorb(self, job_id: str, events: list[TaskEvent], t: int) -> None:
        """Turn backend events for one job into log lines and state events."""
        self._record_logs(job_id, events)
        job = self.state.jobs[job_id]
        terminal = [e for e in events if e.terminal]
        if job.state == "Suspended":
            if not terminal:
                return
            self._emit("resumed", job_id)
        if self.state.jobs[job_id].state != "Running":
            return
        for e in events:
            if e.kind == "started":
                self._emit("rank_started", job_id, rank=e.rank)
        done = len(self.state.jobs[job_id].exit_codes)
        for e in terminal:
            done += 1
            payload = {"rank": e.rank, "code": e.code if e.code is not None else -1}
            if done >= job.nnodes:
                bname, handle = self.handles[job_id]
                runtime = self.registry.backend(bname).runtime(handle, t)
                payload["usage"] = self._usage(job, runtime)
            self._emit("rank_exited", job_id, **payload)

    def _poll_all(self, t: int) -> None:
        for job_id in sorted(self.handles):
            job = self.state.jobs.get(job_id)
            if job is None or job.state not in ("Running", "Suspended"):
                continue
            if job_id in self._stopping:
                continue
            bname, handle = self.handles[job_id]
            backend = self.registry.backend(bname)
            self._absorb(job_id, backend.poll(handle, t), t)
            job = self.state.jobs[job_id]
            if job.state != "Running":
                continue
            limit = job.spec["walltime_estimate_s"] * self.policy.walltime_grace
            runtime = backend.runtime(handle, t)
            if runtime > limit:
                ack = backend.preempt(handle, 0, t)
                self._record_logs(job_id, backend.poll(handle, t))
                self._emit("failed", job_id, reason="WALLTIME_EXCEEDED",
                           usage=self._usage(job, ack.runtime_s))

    def _gang_housekeeping(self, t: int) -> None:
        """Resume the active gang of a partition whose running gang went away."""
        for key in sorted(self.state.gangs):
            rec = self.state.gangs[key]
            active = rec.gangs[rec.active]
            states = [self.state.jobs[j].state for j in active]
            if all(s == "Suspended" for s in states):
                for j in active:
                    self._resume(j, t)
                self._emit("gang_rotated", partition=key, active=rec.active)

    def _snapshot(self, t: int):
        by_node = {n.name: NodeState(n.name, n.capacity) for n in self.nodes}
        accounts = self.accounts()
        pool = list(accounts.values())
        for job_id in sorted(self.state.jobs):
            job = self.state.jobs[job_id]
            if job.state != "Running" or job_id not in self.handles:
                continue
            bname, handle = self.handles[job_id]
            runtime = self.registry.backend(bname).runtime(handle, t)
            wall = job.spec["walltime_estimate_s"]
            share = 1
            if job.partition in self.state.gangs:
                share = len(self.state.gangs[job.partition].gangs)
            est_end = int(t + max(0.0, wall - runtime) * share)
            res = ResourceReq.from_dict(job.spec["resources"])
            entry = QueueEntry(job_id, job.user, res, job.nnodes, wall, job.submit_t,
                               job.spec["qos"])
            prio = compute_priority(entry, accounts[job.user], pool, t, self.policy.weights)
            for name in job.placement:
                by_node[name].allocations.append(Allocation(
                    job_id, res, est_end, job.user, job.spec["qos"], prio,
                    job.start_t if job.start_t is not None else t))
        cluster = ClusterState(list(by_node.values()), t)
        queued = [
            QueueEntry(j.job_id, j.user, ResourceReq.from_dict(j.spec["resources"]), j.nnodes,
                       j.spec["walltime_estimate_s"], j.submit_t, j.spec["qos"])
            for j in self.state.jobs.values() if j.state == "Queued"]
        queue = order_queue(queued, accounts, t, self.policy.weights)
        partitions = [
            GangPartition(r.key, r.placement, ResourceReq.from_dict(r.resources), r.gangs,
                          r.active, r.last_switch)
            for r in self.state.gangs.values()]
        return queue, cluster, accounts, partitions

    # -- applying a decision ----------------------------------------------------------
    def _apply(self, decision: ScheduleDecision, t: int) -> None:
        if decision.empty:
            return
        with self._lock:
            self._t = t
            self._emit("decision_applied", decision=decision.to_dict())
            victims = [j for j in decision.preemptions
                       if self.state.jobs[j].state == "Running" and j in self.handles]
            self._stopping.update(victims)
        acks = {j: self._stop_runners(j, t) for j in victims}
        with self._lock:
            self._t = t
            for job_id in victims:
                self._stopping.discard(job_id)
                job = self.state.jobs[job_id]
                if job.state != "Running":
                    continue
                self._emit("preempted", job_id, usage=self._usage(job, acks[job_id].runtime_s))
                self._emit("enqueued", job_id)
                bname, handle = self.handles.pop(job_id)
                self.registry.backend(bname).release(handle)
            for s in decision.starts:
                if self.state.jobs[s.job_id].state == "Queued":
                    self._start_job(s.job_id, s.placement, t, backfill=s.backfill)
            for g in decision.gang_joins:
                if self.state.jobs[g.job_id].state != "Queued":
                    continue
                founder = g.partition.split("@", 1)[0]
                ok = self._start_job(g.job_id, g.placement, t,
                                     gang={"partition": g.partition, "founder": founder})
                if ok and self.state.jobs[g.job_id].state == "Running":
                    self._suspend(g.job_id, t)
            self._apply_gang_ops(decision.gang_ops, t)

    def _stop_runners(self, job_id: str, t: int) -> PreemptAck:
        bname, handle = self.handles[job_id]
        backend = self.registry.backend(bname)
        ack = backend.preempt(handle, self.policy.grace_s, t)
        self._record_logs(job_id, backend.poll(handle, t))
        return ack

    def _start_job(self, job_id: str, placement: Sequence[str], t: int, backfill: bool = False,
                   gang: dict | None = None) -> bool:
        job = self.state.jobs[job_id]
        self._emit("provisioning", job_id, placement=list(placement),
                   resources=dict(job.spec["resources"]), backfill=backfill, gang=gang)
        spec = spec_from_dict(job.spec)
        trace = SelectionTrace.from_dict(job.trace)
        manifest = self.manifest(job.bundle_id)
        attempted: list[str] = []
        name = next((n for n in trace.backends if self.registry.healthy(n)), None)
        while name is not None:
            attempted.append(name)
            backend = self.registry.backend(name)
            req = ProvisionRequest(job_id, spec, manifest, self.store, list(placement),
                                   spec.env_dict)
            try:
                handle = backend.provision(req, t)
            except ProvisionFailed as exc:
                nxt = failover(name, trace, self.registry, attempted)
                self._last_probe[name] = t
                self._emit("backend_health", backend=name, health="down")
                self._emit("provision_failed", job_id, backend=name, node=exc.node,
                           cause=exc.cause, next=nxt)
                name = nxt
                continue
            old = self.handles.pop(job_id, None)
            if old is not None:
                self.registry.backend(old[0]).release(old[1])
            self.handles[job_id] = (name, handle)
            self._emit("provisioned", job_id, backend=name, runner_ids=list(handle.runner_ids))
            self._absorb(job_id, backend.poll(handle, t), t)
            return True
        self._emit("failed", job_id, reason="BACKEND_UNAVAILABLE")
        return False

    def _suspend(self, job_id: str, t: int) -> None:
        bname, handle = self.handles[job_id]
        backend = self.registry.backend(bname)
        self._absorb(job_id, backend.poll(handle, t), t)
        if self.state.jobs[job_id].state == "Running":
            backend.suspend(handle, t)
            self._emit("suspended", job_id)

    def _resume(self, job_id: str, t: int) -> None:
        if self.state.jobs[job_id].state != "Suspended" or job_id not in self.handles:
            return
        bname, handle = self.handles[job_id]
        self.registry.backend(bname).resume(handle, t)
        self._emit("resumed", job_id)

    def _apply_gang_ops(self, ops: Sequence[tuple[str, str]], t: int) -> None:
        if not ops:
            return
        for job_id, op in ops:
            if op == "suspend" and self.state.jobs[job_id].state == "Running":
                self._suspend(job_id, t)
        rotated: dict[str, int] = {}
        for job_id, op in ops:
            if op != "resume":
                continue
            job = self.state.jobs[job_id]
            rec = self.state.gangs.get(job.partition)
            if rec is None:
                continue
            self._resume(job_id, t)
            for i, g in enumerate(rec.gangs):
                if job_id in g:
                    rotated[rec.key] = i
        for key in sorted(rotated):
            if key in self.state.gangs:
                self._emit("gang_rotated", partition=key, active=rotated[key])

    # -- operator / client operations -----------------------------------------------------
    def kill(self, job_id: str) -> str:
        with self._lock:
            self._t = self.clock.now()
            job = self.state.jobs.get(job_id)
            if job is None:
                raise NotFound(f"no job {job_id}")
            if job.state == "Queued":
                self._emit("killed", job_id, reason="killed by user")
                return "Killed"
            if job.state not in ("Running", "Suspended") or job_id not in self.handles:
                raise StateConflict(f"cannot kill a job in state {job.state}", field=job_id)
            self._stopping.add(job_id)
            t = self._t
        try:
            ack = self._stop_runners(job_id, t)
        finally:
            with self._lock:
                self._stopping.discard(job_id)
        with self._lock:
            self._t = t
            job = self.state.jobs[job_id]
            if job.state in ("Running", "Suspended"):
                self._emit("killed", job_id, reason="killed by user",
                           usage=self._usage(job, ack.runtime_s))
            return self.state.jobs[job_id].state

    def job(self, job_id: str) -> JobRecord:
        job = self.state.jobs.get(job_id)
        if job is None:
            raise NotFound(f"no job {job_id}")
        return job

    def summary(self, job: JobRecord, now: int | None = None) -> dict:
        now = self.clock.now() if now is None else now
        return {
            "job_id": job.job_id, "user": job.user, "name": job.spec.get("name", ""),
            "state": job.state, "reason": job.reason, "age": max(0, now - job.submit_t),
            "nodes": job.nnodes, "backend": job.backend,
            "exit_codes": {str(r): c for r, c in job.exit_codes},
        }

    def status(self, job_id: str) -> dict:
        job = self.job(job_id)
        out = self.summary(job)
        out.update({"history": [list(h) for h in job.history], "trace": job.trace,
                    "placement": list(job.placement), "bundle_id": job.bundle_id,
                    "spec_hash": job.spec_hash, "usage": job.usage})
        return out

    def list_jobs(self, filt: dict | None = None) -> list[dict]:
        filt = filt or {}
        now = self.clock.now()
        out = []
        for job_id in sorted(self.state.jobs):
            job = self.state.jobs[job_id]
            if "user" in filt and job.user != filt["user"]:
                continue
            if "state" in filt and job.state != filt["state"]:
                continue
            out.append(self.summary(job, now))
        return out

    def attach_logs(self, job_id: str, follow: bool = False, since_seq: int = 0,
                    poll_s: float = 0.05, timeout_s: float | None = None) -> Iterator[LogLine]:
        self.job(job_id)
        pos = max(0, since_seq)
        deadline = None if timeout_s is None else time.monotonic() + timeout_s
        while True:
            with self._log_cond:
                lines = self.logs.get(job_id, [])
                batch = lines[pos:]
                pos = len(lines)
            yield from batch
            if not follow:
                return
            if self.state.jobs[job_id].terminal:
                with self._log_cond:
                    if len(self.logs.get(job_id, [])) == pos:
                        return
                continue
            if deadline is not None and time.monotonic() > deadline:
                return
            with self._log_cond:
                if len(self.logs.get(job_id, [])) == pos:
                    self._log_cond.wait(poll_s)

    def fetch_files(self, job_id: str, pattern: str) -> bytes:
        self.job(job_id)
        files: list[tuple[int, str, bytes]] = []
        entry = self.handles.get(job_id)
        if entry is not None:
            bname, handle = entry
            files = self.registry.backend(bname).fetch(handle, pattern)
        buf = io.BytesIO()
        with tarfile.open(fileobj=buf, mode="w") as tar:
            for rank, path, data in sorted(files):
                info = tarfile.TarInfo(f"rank{rank}/{path}")
                info.size = len(data)
                info.mode = 0o644
                tar.addfile(info, io.BytesIO(data))
        return buf.getvalue()

    def live_runners(self) -> int:
        return sum(self.registry.backend(n).live_runners() for n in self.registry.names())

    # -- housekeeping ---------------------------------------------------------------------
    def gc(self, now: int | None = None) -> int:
        """Drop working dirs of long-finished jobs and unreachable CAS content."""
        now = self.clock.now() if now is None else now
        with self._lock:
            live: list[BundleManifest] = []
            for job in self.state.jobs.values():
                finished = job.history[-1][1] if job.history else now
                expired = job.terminal and now - finished >= self.workdir_retention_s
                if expired:
                    entry = self.handles.pop(job.job_id, None)
                    if entry is not None:
                        self.registry.backend(entry[0]).release(entry[1])
                    continue
                try:
                    live.append(self.manifest(job.bundle_id))
                except MissingObject:
                    pass
            recent = [self.manifest(b) for b in self.store.iter_manifests()
                      if b not in {j.bundle_id for j in self.state.jobs.values()}]
            # bundles uploaded but not yet submitted stay alive until a job claims them
            live.extend(recent)
            self._manifests = {m.bundle_id: m for m in live}
            return cas_gc(self.store, live)

    def reload_policy(self, policy: Policy) -> None:
        with self._lock:
            self.policy = policy

    # -- background loop -------------------------------------------------------------------
    def start(self, period_s: float = 1.0) -> None:
        if self._thread is not None:
            return
        self._stop.clear()

        def loop():
            while not self._stop.is_set():
                woke = self._wake.wait(period_s)
                self._wake.clear()
                if self._stop.is_set():
                    break
                if not woke:
                    self.clock.advance(1)
                try:
                    self.tick()
                except Exception:  # keep the service alive; the error is logged
                    log.exception("scheduler tick failed")

        self._thread = threading.Thread(target=loop, name="tacc-scheduler", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        self._wake.set()
        if self._thread is not None:
            self._thread.join(timeout=10)
            self._thread = None

    def close(self) -> None:
        self.stop()
        if self.log is not None:
            self.log.close()

    def run_ticks(self, n: int, dt: int = 1) -> None:
        """Advance the virtual clock ``n`` times, ticking after each step."""
        for _ in range(n):
            self.clock.advance(dt)
            self.tick()

    def run_until_idle(self, max_ticks: int = 10_000, dt: int = 1) -> int:
        """Tick until no job is waiting or running; returns ticks used."""
        for i in range(max_ticks):
            if all(j.terminal for j in self.state.jobs.values()):
                return i
            self.clock.advance(dt)
            self.tick()
        raise TimeoutError("jobs still active after max_ticks")
