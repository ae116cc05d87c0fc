"""Types shared by execution backends."""
from __future__ import annotations

import fnmatch
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

from ..bundle import BundleManifest
from ..cas import ObjectStore
from ..schema import ResourceReq, TaskSpec


@dataclass(frozen=True)
class TaskEvent:
    kind: str  # started | log | exited | failed
    rank: int
    seq: int
    ts: float
    stream: str = ""
    text: str = ""
    code: int | None = None
    cause: str = ""

    @property
    def terminal(self) -> bool:
        return self.kind in ("exited", "failed")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "rank": self.rank, "seq": self.seq, "ts": self.ts,
                "stream": self.stream, "text": self.text, "code": self.code,
                "cause": self.cause}


@dataclass(frozen=True)
class TaskHandle:
    job_id: str
    backend: str
    runner_ids: tuple[str, ...]
    start_time_s: float
    placement: tuple[str, ...] = ()

    @property
    def nnodes(self) -> int:
        return len(self.runner_ids)


@dataclass(frozen=True)
class PreemptAck:
    job_id: str
    noop: bool
    runtime_s: float
    cpu_seconds: float
    gpu_seconds: float


@dataclass
class ProvisionRequest:
    job_id: str
    spec: TaskSpec
    manifest: BundleManifest
    store: ObjectStore
    placement: Sequence[str]
    env: Mapping[str, str] = field(default_factory=dict)

    @property
    def resources(self) -> ResourceReq:
        return self.spec.resources


def job_env(job_id: str, placement: Sequence[str], rank: int,
            base: Mapping[str, str]) -> dict[str, str]:
    env = dict(base)
    env.update({
        "TACC_JOB_ID": job_id,
        "TACC_NODE_RANK": str(rank),
        "TACC_NNODES": str(len(placement)),
        "TACC_NODELIST": ",".join(placement),
    })
    return env


def glob_match(pattern: str, relpath: str) -> bool:
    """Segment-wise glob: ``*`` stays inside one path segment, ``**`` spans any."""
    pat = [p for p in pattern.strip("/").split("/") if p not in ("", ".")]
    parts = relpath.split("/")

    def match(i: int, j: int) -> bool:
        if i == len(pat):
            return j == len(parts)
        if pat[i] == "**":
            return any(match(i + 1, k) for k in range(j, len(parts) + 1))
        return j < len(parts) and fnmatch.fnmatchcase(parts[j], pat[i]) and match(i + 1, j + 1)

    return match(0, 0)


class Backend:
    """Interface every runtime implements.

    ``poll`` returns events produced up to ``now``; per-rank sequence
    numbers start at 1 and each rank ends with exactly one terminal event.
    """

    kind = "abstract"

    def __init__(self, name: str):
        self.name = name

    def probe(self) -> bool:
        return True

    def provision(self, req: ProvisionRequest, now: float) -> TaskHandle:
        raise NotImplementedError

    def poll(self, handle: TaskHandle, now: float) -> list[TaskEvent]:
        raise NotImplementedError

    def watch(self, handle: TaskHandle, until: float | None = None) -> Iterator[TaskEvent]:
        raise NotImplementedError

    def preempt(self, handle: TaskHandle, grace_s: float, now: float) -> PreemptAck:
        raise NotImplementedError

    def suspend(self, handle: TaskHandle, now: float) -> None:
        raise NotImplementedError

    def resume(self, handle: TaskHandle, now: float) -> None:
        raise NotImplementedError

    def fetch(self, handle: TaskHandle, pattern: str) -> list[tuple[int, str, bytes]]:
        raise NotImplementedError

    def release(self, handle: TaskHandle) -> None:
        """Drop runner bookkeeping and working directories."""

    def live_runners(self) -> int:
        return 0
