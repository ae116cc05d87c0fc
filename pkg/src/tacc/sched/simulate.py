"""Event-driven workload replay through ``schedule_cycle``.

Used to compare policies (e.g. backfill on/off) on the same workload.  A
cycle runs at every arrival and completion instant; completions are
processed before arrivals at the same instant.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from ..schema import ResourceReq
from .core import schedule_cycle
from .model import (AccountState, Allocation, ClusterState, NodeState, Policy,
                    QueueEntry, ScheduleDecision)
from .priority import order_queue


@dataclass(frozen=True)
class SimJob:
    job_id: str
    submit_s: int
    resources: ResourceReq
    walltime_s: int
    nodes: int = 1
    user: str = "u0"
    qos: str = "normal"
    runtime_s: int | None = None  # defaults to the walltime estimate

    @property
    def actual_runtime(self) -> int:
        return self.walltime_s if self.runtime_s is None else self.runtime_s


@dataclass
class SimResult:
    starts: dict[str, int] = field(default_factory=dict)
    ends: dict[str, int] = field(default_factory=dict)
    placements: dict[str, tuple[str, ...]] = field(default_factory=dict)
    cycles: list[tuple[int, ScheduleDecision]] = field(default_factory=list)

    def first_reservation(self) -> tuple[int, str] | None:
        for t, d in self.cycles:
            if d.reservation is not None:
                return t, d.reservation.job_id
        return None


class Stuck(RuntimeError):
    pass


def simulate(jobs: Sequence[SimJob], nodes: Sequence[tuple[str, ResourceReq]],
             policy: Policy = Policy(),
             accounts: Mapping[str, AccountState] | None = None) -> SimResult:
    accounts = dict(accounts or {})
    pending = sorted(jobs, key=lambda j: (j.submit_s, j.job_id))
    by_id = {j.job_id: j for j in jobs}
    queue: list[SimJob] = []
    running: dict[str, tuple[int, tuple[str, ...]]] = {}
    result = SimResult()
    pi = 0
    while pi < len(pending) or queue or running:
        candidates = [end for end, _ in running.values()]
        if pi < len(pending):
            candidates.append(pending[pi].submit_s)
        if not candidates:
            raise Stuck(f"jobs can never start: {[j.job_id for j in queue]}")
        now = min(candidates)
        for job_id in sorted(j for j, (end, _) in running.items() if end == now):
            del running[job_id]
            result.ends[job_id] = now
        while pi < len(pending) and pending[pi].submit_s == now:
            queue.append(pending[pi])
            pi += 1

        state_nodes = {name: NodeState(name, cap) for name, cap in nodes}
        for job_id, (_, placement) in running.items():
            job = by_id[job_id]
            for name in placement:
                state_nodes[name].allocations.append(Allocation(
                    job_id, job.resources, result.starts[job_id] + job.walltime_s,
                    job.user, job.qos, 0.0, result.starts[job_id]))
        cluster = ClusterState(list(state_nodes.values()), now)
        entries = order_queue(
            [QueueEntry(j.job_id, j.user, j.resources, j.nodes, j.walltime_s,
                        j.submit_s, j.qos) for j in queue],
            accounts, now, policy.weights)
        decision = schedule_cycle(entries, cluster, accounts, policy)
        result.cycles.append((now, decision))
        started = set()
        for s in decision.starts:
            job = by_id[s.job_id]
            result.starts[s.job_id] = now
            result.placements[s.job_id] = s.placement
            running[s.job_id] = (now + job.actual_runtime, s.placement)
            started.add(s.job_id)
        queue = [j for j in queue if j.job_id not in started]
    return result
