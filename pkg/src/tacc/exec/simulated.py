"""Deterministic virtual-cluster backend.

Jobs run against a virtual clock supplied by the caller.  What each rank
does is read from a script file inside the bundle when the entrypoint is
``tacc-sim <path>``::

    [{"rank": 0, "at": 5, "kind": "log", "text": "hello"},
     {"rank": 0, "at": 7, "kind": "write", "path": "out/a.txt", "data": "x"},
     {"rank": 0, "at": 10, "kind": "exit", "code": 0},
     {"rank": 1, "kind": "provision_fail", "backend": "sim0"}]

``at`` counts seconds of *running* time, so a suspended job makes no
progress.  A rank without an ``exit`` event exits 0 once it has run for the
task's walltime estimate.
"""
from __future__ import annotations

import json
import math
import random
import shlex
from dataclasses import dataclass, field
from typing import Iterator

from ..bundle import BundleManifest
from ..cas import ObjectStore
from ..errors import ProvisionFailed
from .base import Backend, PreemptAck, ProvisionRequest, TaskEvent, TaskHandle, glob_match, job_env

SIM_COMMAND = "tacc-sim"
EVENT_KINDS = ("log", "exit", "write", "provision_fail")


@dataclass(frozen=True)
class ScriptEvent:
    rank: int
    kind: str
    at: int = 0
    text: str = ""
    stream: str = "stdout"
    code: int = 0
    path: str = ""
    data: str = ""
    backend: str | None = None


def parse_script(text: str) -> list[ScriptEvent]:
    doc = json.loads(text)
    if isinstance(doc, dict):
        doc = doc.get("events", [])
    events = []
    for item in doc:
        kind = item["kind"]
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown sim event kind {kind!r}")
        events.append(ScriptEvent(
            rank=int(item.get("rank", 0)), kind=kind, at=int(item.get("at", 0)),
            text=str(item.get("text", "")), stream=str(item.get("stream", "stdout")),
            code=int(item.get("code", 0)), path=str(item.get("path", "")),
            data=str(item.get("data", "")), backend=item.get("backend")))
    return events


def script_from_bundle(manifest: BundleManifest, store: ObjectStore) -> list[ScriptEvent] | None:
    try:
        argv = shlex.split(manifest.entrypoint)
    except ValueError:
        return None
    if len(argv) < 2 or argv[0] != SIM_COMMAND:
        return None
    for entry in manifest.entries:
        if entry.path == argv[1]:
            data = b"".join(store.get(d) for d in entry.chunks)
            return parse_script(data.decode("utf-8"))
    raise ValueError(f"sim script {argv[1]!r} not in bundle")


@dataclass
class _Rank:
    events: list[ScriptEvent]
    cursor: int = 0
    seq: int = 0
    done: bool = False
    files: dict[str, bytes] = field(default_factory=dict)
    env: dict[str, str] = field(default_factory=dict)


@dataclass
class _SimJob:
    handle: TaskHandle
    req: ProvisionRequest
    ranks: list[_Rank]
    acc: float = 0.0
    run_from: float | None = None
    pending: list[TaskEvent] = field(default_factory=list)
    finished_progress: float | None = None

    def progress(self, now: float) -> float:
        if self.run_from is None:
            return self.acc
        return self.acc + max(0.0, now - self.run_from)

    @property
    def all_done(self) -> bool:
        return all(r.done for r in self.ranks)


class SimulatedBackend(Backend):
    kind = "simulated"

    def __init__(self, name: str, seed: int = 0, provision_fail_rate: float = 0.0):
        super().__init__(name)
        self.seed = seed
        self.rng = random.Random(seed)
        self.provision_fail_rate = provision_fail_rate
        self.up = True
        self.fail_next = 0
        self.jobs: dict[str, _SimJob] = {}
        self._attempt = 0

    def probe(self) -> bool:
        return self.up

    def _emit(self, job: _SimJob, rank: int, kind: str, ts: float, **kw) -> TaskEvent:
        r = job.ranks[rank]
        r.seq += 1
        return TaskEvent(kind, rank, r.seq, ts, **kw)

    def provision(self, req: ProvisionRequest, now: float) -> TaskHandle:
        placement = list(req.placement)
        if not self.up:
            raise ProvisionFailed(placement[0] if placement else "?", f"backend {self.name} is down")
        if self.fail_next > 0:
            self.fail_next -= 1
            raise ProvisionFailed(placement[0], "injected provisioning fault")
        if self.provision_fail_rate and self.rng.random() < self.provision_fail_rate:
            raise ProvisionFailed(placement[0], "random provisioning fault")
        try:
            script = script_from_bundle(req.manifest, req.store)
        except (ValueError, KeyError) as exc:
            raise ProvisionFailed(placement[0], f"bad sim script: {exc}") from None
        script = script or []
        for ev in script:
            if ev.kind == "provision_fail" and ev.backend in (None, self.name):
                node = placement[ev.rank] if ev.rank < len(placement) else placement[0]
                raise ProvisionFailed(node, "scripted provisioning fault")

        self._attempt += 1
        runner_ids = tuple(f"{self.name}/{req.job_id}/{self._attempt}/rank{k}"
                           for k in range(len(placement)))
        handle = TaskHandle(req.job_id, self.name, runner_ids, now, tuple(placement))
        ranks = []
        for k in range(len(placement)):
            mine = [e for e in script if e.rank == k and e.kind != "provision_fail"]
            if not any(e.kind == "exit" for e in mine):
                mine.append(ScriptEvent(k, "exit", req.spec.walltime_estimate_s, code=0))
            order = {id(e): i for i, e in enumerate(mine)}
            mine.sort(key=lambda e: (e.at, order[id(e)]))
            exit_at = next(i for i, e in enumerate(mine) if e.kind == "exit")
            ranks.append(_Rank(mine[:exit_at + 1],
                               env=job_env(req.job_id, placement, k, req.env)))
        job = _SimJob(handle, req, ranks, run_from=now)
        for k in range(len(ranks)):
            job.pending.append(self._emit(job, k, "started", now))
        self.jobs[req.job_id] = job
        return handle

    def _job(self, handle: TaskHandle) -> _SimJob:
        return self.jobs[handle.job_id]

    def poll(self, handle: TaskHandle, now: float) -> list[TaskEvent]:
        job = self._job(handle)
        out, job.pending = job.pending, []
        if job.run_from is None:
            return out
        limit = job.progress(now)
        fired = []
        for k, r in enumerate(job.ranks):
            while not r.done and r.cursor < len(r.events) and r.events[r.cursor].at <= limit:
                ev = r.events[r.cursor]
                r.cursor += 1
                fired.append((job.run_from + (ev.at - job.acc), k, r.cursor, ev))
        fired.sort(key=lambda f: (f[0], f[1], f[2]))
        for ts, k, _, ev in fired:
            r = job.ranks[k]
            if ev.kind == "log":
                out.append(self._emit(job, k, "log", ts, stream=ev.stream, text=ev.text))
            elif ev.kind == "write":
                r.files[ev.path] = ev.data.encode("utf-8")
            elif ev.kind == "exit":
                r.done = True
                out.append(self._emit(job, k, "exited", ts, code=ev.code))
        if job.all_done and job.finished_progress is None:
            job.finished_progress = max(r.events[-1].at for r in job.ranks)
        return out

    def watch(self, handle: TaskHandle, until: float | None = None) -> Iterator[TaskEvent]:
        yield from self.poll(handle, math.inf if until is None else until)

    def _ack(self, job: _SimJob, noop: bool, runtime: float) -> PreemptAck:
        res = job.req.spec.resources
        n = job.handle.nnodes
        return PreemptAck(job.handle.job_id, noop, runtime,
                          runtime * res.cpus * n, runtime * res.gpus * n)

    def preempt(self, handle: TaskHandle, grace_s: float, now: float) -> PreemptAck:
        job = self._job(handle)
        drained = self.poll(handle, now)
        job.pending = drained + job.pending
        if job.all_done:
            return self._ack(job, True, job.finished_progress or 0.0)
        runtime = job.progress(now)
        for k, r in enumerate(job.ranks):
            if not r.done:
                r.done = True
                job.pending.append(self._emit(job, k, "failed", now, cause="preempted"))
        job.acc, job.run_from = runtime, None
        job.finished_progress = runtime
        return self._ack(job, False, runtime)

    def suspend(self, handle: TaskHandle, now: float) -> None:
        job = self._job(handle)
        drained = self.poll(handle, now)
        job.pending = drained + job.pending
        if job.run_from is not None:
            job.acc = job.progress(now)
            job.run_from = None

    def resume(self, handle: TaskHandle, now: float) -> None:
        job = self._job(handle)
        if job.run_from is None and not job.all_done:
            job.run_from = now

    def runtime(self, handle: TaskHandle, now: float) -> float:
        job = self._job(handle)
        if job.finished_progress is not None:
            return job.finished_progress
        return job.progress(now)

    def runner_env(self, handle: TaskHandle, rank: int) -> dict[str, str]:
        return dict(self._job(handle).ranks[rank].env)

    def fetch(self, handle: TaskHandle, pattern: str) -> list[tuple[int, str, bytes]]:
        job = self._job(handle)
        manifest, store = job.req.manifest, job.req.store
        out = []
        for k, r in enumerate(job.ranks):
            files = {e.path: e for e in manifest.entries if e.mode != "dir"}
            names = sorted(set(files) | set(r.files))
            for path in names:
                if not glob_match(pattern, path):
                    continue
                if path in r.files:
                    data = r.files[path]
                else:
                    data = b"".join(store.get(d) for d in files[path].chunks)
                out.append((k, path, data))
        return out

    def release(self, handle: TaskHandle) -> None:
        self.jobs.pop(handle.job_id, None)

    def live_runners(self) -> int:
        return sum(1 for j in self.jobs.values() for r in j.ranks if not r.done)
