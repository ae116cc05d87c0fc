"""Run each rank of a job as an OS process group on this host."""
from __future__ import annotations

import os
import queue
import shutil
import signal
import subprocess
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from ..bundle import materialize
from ..errors import BundleIOError, MissingObject, ProvisionFailed
from .base import Backend, PreemptAck, ProvisionRequest, TaskEvent, TaskHandle, glob_match, job_env

_PASSTHROUGH_ENV = ("PATH", "HOME", "LANG", "LC_ALL", "TMPDIR", "PYTHONPATH")


@dataclass
class _Proc:
    popen: subprocess.Popen
    workdir: Path
    env: dict[str, str]
    readers: list[threading.Thread] = field(default_factory=list)
    seq: int = 0
    done: bool = False
    stop_cause: str = ""


@dataclass
class _LocalJob:
    handle: TaskHandle
    req: ProvisionRequest
    procs: list[_Proc]
    lines: queue.Queue
    started_mono: float
    suspended_s: float = 0.0
    suspended_at: float | None = None
    pending: list[TaskEvent] = field(default_factory=list)
    ended_mono: float | None = None

    def runtime(self) -> float:
        end = self.ended_mono if self.ended_mono is not None else time.monotonic()
        paused = self.suspended_s
        if self.suspended_at is not None:
            paused += end - self.suspended_at
        return max(0.0, end - self.started_mono - paused)


def _reader(stream, rank: int, name: str, sink: queue.Queue) -> None:
    for raw in iter(stream.readline, b""):
        sink.put((time.time(), rank, name, raw.decode("utf-8", "replace").rstrip("\n")))
    stream.close()


class LocalProcessBackend(Backend):
    kind = "local_process"

    def __init__(self, name: str, root: str | os.PathLike):
        super().__init__(name)
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.jobs: dict[str, _LocalJob] = {}
        self._lock = threading.Lock()

    def provision(self, req: ProvisionRequest, now: float) -> TaskHandle:
        placement = list(req.placement)
        procs: list[_Proc] = []
        lines: queue.Queue = queue.Queue()
        base = {k: os.environ[k] for k in _PASSTHROUGH_ENV if k in os.environ}
        base.update(req.env)
        try:
            for rank, node in enumerate(placement):
                workdir = Path(tempfile.mkdtemp(prefix=f"{req.job_id}-rank{rank}-", dir=self.root))
                try:
                    materialize(req.manifest, req.store, workdir)
                except (BundleIOError, MissingObject) as exc:
                    raise ProvisionFailed(node, str(exc)) from None
                env = job_env(req.job_id, placement, rank, base)
                env["TACC_WORKDIR"] = str(workdir)
                try:
                    popen = subprocess.Popen(
                        ["/bin/sh", "-c", req.manifest.entrypoint], cwd=workdir, env=env,
                        stdin=subprocess.DEVNULL, stdout=subprocess.PIPE,
                        stderr=subprocess.PIPE, start_new_session=True)
                except OSError as exc:
                    raise ProvisionFailed(node, f"spawn failed: {exc}") from None
                proc = _Proc(popen, workdir, env)
                for name, stream in (("stdout", popen.stdout), ("stderr", popen.stderr)):
                    t = threading.Thread(target=_reader, args=(stream, rank, name, lines),
                                         daemon=True)
                    t.start()
                    proc.readers.append(t)
                procs.append(proc)
        except ProvisionFailed:
            for p in procs:
                self._signal(p, signal.SIGKILL)
                p.popen.wait()
                shutil.rmtree(p.workdir, ignore_errors=True)
            raise
        runner_ids = tuple(f"{self.name}/pid{p.popen.pid}" for p in procs)
        handle = TaskHandle(req.job_id, self.name, runner_ids, now, tuple(placement))
        job = _LocalJob(handle, req, procs, lines, time.monotonic())
        wall = time.time()
        for rank in range(len(procs)):
            job.pending.append(self._event(job, rank, "started", wall))
        with self._lock:
            self.jobs[req.job_id] = job
        return handle

    @staticmethod
    def _event(job: _LocalJob, rank: int, kind: str, ts: float, **kw) -> TaskEvent:
        p = job.procs[rank]
        p.seq += 1
        return TaskEvent(kind, rank, p.seq, ts, **kw)

    @staticmethod
    def _signal(proc: _Proc, sig: int) -> None:
        try:
            os.killpg(proc.popen.pid, sig)
        except (ProcessLookupError, PermissionError):
            pass

    def _job(self, handle: TaskHandle) -> _LocalJob:
        return self.jobs[handle.job_id]

    def poll(self, handle: TaskHandle, now: float | None = None) -> list[TaskEvent]:
        job = self._job(handle)
        out, job.pending = job.pending, []
        while True:
            try:
                ts, rank, stream, text = job.lines.get_nowait()
            except queue.Empty:
                break
            out.append(self._event(job, rank, "log", ts, stream=stream, text=text))
        for rank, p in enumerate(job.procs):
            if p.done or p.popen.poll() is None:
                continue
            if any(t.is_alive() for t in p.readers):
                continue
            # drain lines the readers queued after the loop above
            while True:
                try:
                    ts, r, stream, text = job.lines.get_nowait()
                except queue.Empty:
                    break
                out.append(self._event(job, r, "log", ts, stream=stream, text=text))
            p.done = True
            code = p.popen.returncode
            if p.stop_cause:
                out.append(self._event(job, rank, "failed", time.time(), code=code,
                                       cause=p.stop_cause))
            else:
                out.append(self._event(job, rank, "exited", time.time(), code=code))
        if job.ended_mono is None and all(p.done for p in job.procs):
            job.ended_mono = time.monotonic()
        return out

    def watch(self, handle: TaskHandle, until: float | None = None) -> Iterator[TaskEvent]:
        job = self._job(handle)
        while True:
            yield from self.poll(handle)
            if all(p.done for p in job.procs):
                return
            if until is not None and time.time() >= until:
                return
            time.sleep(0.02)

    def _ack(self, job: _LocalJob, noop: bool) -> PreemptAck:
        runtime = job.runtime()
        res = job.req.spec.resources
        n = len(job.procs)
        return PreemptAck(job.handle.job_id, noop, runtime, runtime * res.cpus * n,
                          runtime * res.gpus * n)

    def preempt(self, handle: TaskHandle, grace_s: float, now: float | None = None) -> PreemptAck:
        job = self._job(handle)
        live = [p for p in job.procs if p.popen.poll() is None]
        if not live:
            return self._ack(job, True)
        for p in live:
            p.stop_cause = "preempted"
            self._signal(p, signal.SIGTERM)
            self._signal(p, signal.SIGCONT)
        deadline = time.monotonic() + grace_s
        while time.monotonic() < deadline and any(p.popen.poll() is None for p in live):
            time.sleep(0.02)
        for p in live:
            if p.popen.poll() is None:
                self._signal(p, signal.SIGKILL)
            p.popen.wait()
            for t in p.readers:
                t.join(timeout=5)
        if job.suspended_at is not None:
            job.suspended_s += time.monotonic() - job.suspended_at
            job.suspended_at = None
        job.ended_mono = time.monotonic()
        return self._ack(job, False)

    def suspend(self, handle: TaskHandle, now: float | None = None) -> None:
        job = self._job(handle)
        if job.suspended_at is None:
            for p in job.procs:
                self._signal(p, signal.SIGSTOP)
            job.suspended_at = time.monotonic()

    def resume(self, handle: TaskHandle, now: float | None = None) -> None:
        job = self._job(handle)
        if job.suspended_at is not None:
            for p in job.procs:
                self._signal(p, signal.SIGCONT)
            job.suspended_s += time.monotonic() - job.suspended_at
            job.suspended_at = None

    def runtime(self, handle: TaskHandle, now: float | None = None) -> float:
        return self._job(handle).runtime()

    def workdirs(self, handle: TaskHandle) -> list[Path]:
        return [p.workdir for p in self._job(handle).procs]

    def runner_env(self, handle: TaskHandle, rank: int) -> dict[str, str]:
        return dict(self._job(handle).procs[rank].env)

    def fetch(self, handle: TaskHandle, pattern: str) -> list[tuple[int, str, bytes]]:
        out = []
        for rank, p in enumerate(self._job(handle).procs):
            for path in sorted(p.workdir.rglob("*")):
                if not path.is_file() or path.is_symlink():
                    continue
                rel = path.relative_to(p.workdir).as_posix()
                if glob_match(pattern, rel):
                    out.append((rank, rel, path.read_bytes()))
        return out

    def release(self, handle: TaskHandle) -> None:
        with self._lock:
            job = self.jobs.pop(handle.job_id, None)
        if job is None:
            return
        for p in job.procs:
            if p.popen.poll() is None:
                self._signal(p, signal.SIGKILL)
                p.popen.wait()
            shutil.rmtree(p.workdir, ignore_errors=True)

    def live_runners(self) -> int:
        return sum(1 for j in list(self.jobs.values()) for p in j.procs
                   if p.popen.poll() is None)
