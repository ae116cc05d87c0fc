"""One scheduling cycle: priority starts, EASY backfill, preemption, gangs.

The engine is a pure function of its inputs.  Nodes are always visited in
name order and every tie is broken explicitly, so identical inputs give an
identical decision.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Iterable, Mapping, Sequence

from ..schema import ResourceReq
from . import kernels
from .gang import GangPartition, gang_rotate
from .model import (AccountState, ClusterState, GangJoin, Policy, QueueEntry,
                    Reservation, ScheduleDecision, Start)
from .priority import check_quota

MAX_PREEMPT_CANDIDATES = 16


@dataclass
class _Running:
    job_id: str
    user: str
    qos: str
    priority: float
    start_s: int
    est_end_s: int
    allocs: list[tuple[int, ResourceReq]] = field(default_factory=list)

    @property
    def gpus(self) -> int:
        return sum(r.gpus for _, r in self.allocs)


class _Cycle:
    def __init__(self, cluster: ClusterState, accounts: Mapping[str, AccountState],
                 policy: Policy, partitions: Iterable[GangPartition]):
        self.now = cluster.now
        self.policy = policy
        self.accounts = accounts
        nodes = cluster.sorted_nodes()
        self.names = [n.name for n in nodes]
        self.free: list[int] = []
        self.jobs: dict[str, _Running] = {}
        for i, node in enumerate(nodes):
            self.free.extend(node.free().as_tuple())
            for a in node.allocations:
                rj = self.jobs.get(a.job_id)
                if rj is None:
                    rj = self.jobs[a.job_id] = _Running(
                        a.job_id, a.user, a.qos, a.priority, a.start_s, a.est_end_s)
                rj.allocs.append((i, a.resources))
        self.running_gpus: Counter[str] = Counter()
        for rj in self.jobs.values():
            self.running_gpus[rj.user] += rj.gpus
        # (end, node index, cpus, gpus, mem, job)
        self.releases = [(rj.est_end_s, i, *r.as_tuple(), rj.job_id)
                         for rj in self.jobs.values() for i, r in rj.allocs]
        self.decision = ScheduleDecision()

        explicit = sorted(partitions, key=lambda p: p.key)
        self.partitions: dict[str, GangPartition] = {p.key: p for p in explicit}
        in_gangs = {j for p in explicit for j in p.members()}
        for job_id in sorted(self.jobs):
            rj = self.jobs[job_id]
            shapes = {r for _, r in rj.allocs}
            if rj.qos != "preemptible" or job_id in in_gangs or len(shapes) != 1:
                continue
            key = f"{job_id}@{rj.start_s}"
            self.partitions[key] = GangPartition(
                key=key,
                placement=tuple(self.names[i] for i, _ in sorted(rj.allocs)),
                resources=shapes.pop(),
                gangs=((job_id,),),
                last_switch=rj.start_s,
            )
        self.protected = {j for p in self.partitions.values() if len(p.gangs) > 1
                          for j in p.members()}

    # -- helpers
    def account(self, user: str) -> AccountState:
        return self.accounts.get(user) or AccountState(user)

    def sorted_releases(self) -> list[int]:
        flat: list[int] = []
        for rec in sorted(self.releases, key=lambda r: (r[0], r[1], r[5])):
            flat.extend(rec[:5])
        return flat

    def start(self, entry: QueueEntry, picked: Sequence[int], backfill: bool) -> None:
        r = entry.resources
        end = self.now + entry.walltime_s
        for i in picked:
            o = i * kernels.WIDTH
            self.free[o] -= r.cpus
            self.free[o + 1] -= r.gpus
            self.free[o + 2] -= r.mem_mib
            self.releases.append((end, i, r.cpus, r.gpus, r.mem_mib, entry.job_id))
        self.running_gpus[entry.user] += r.gpus * entry.nodes
        self.decision.starts.append(Start(
            entry.job_id, tuple(self.names[i] for i in picked), r, backfill))

    def try_gang_join(self, entry: QueueEntry) -> bool:
        if not self.policy.gang_enabled or entry.qos != "preemptible":
            return False
        for key in sorted(self.partitions):
            part = self.partitions[key]
            if (part.resources == entry.resources and len(part.placement) == entry.nodes
                    and len(part.gangs) < self.policy.max_gangs):
                gangs = part.gangs + ((entry.job_id,),)
                # a fresh pairing gets a full quantum before the first switch
                last = self.now if len(part.gangs) == 1 else part.last_switch
                self.partitions[key] = replace(part, gangs=gangs, last_switch=last)
                self.decision.gang_joins.append(
                    GangJoin(entry.job_id, key, part.placement, entry.resources))
                return True
        return False

    def select_victims(self, entry: QueueEntry):
        """Fewest preemptible jobs whose release lets ``entry`` start now.

        Candidates are ordered lowest priority first, then latest start, so
        the first feasible combination of the smallest size is the answer.
        """
        cands = [rj for rj in self.jobs.values()
                 if rj.qos == "preemptible" and rj.job_id not in self.protected]
        cands.sort(key=lambda rj: (rj.priority, -rj.start_s, rj.job_id))
        cands = cands[:MAX_PREEMPT_CANDIDATES]
        need = entry.resources.as_tuple()
        for k in range(1, len(cands) + 1):
            for combo in combinations(cands, k):
                trial = list(self.free)
                for rj in combo:
                    for i, r in rj.allocs:
                        o = i * kernels.WIDTH
                        trial[o] += r.cpus
                        trial[o + 1] += r.gpus
                        trial[o + 2] += r.mem_mib
                picked = kernels.first_fit(trial, need, entry.nodes)
                if picked is not None:
                    return combo, trial, picked
        return None

    def preempt(self, victims, trial: list[int]) -> None:
        gone = {rj.job_id for rj in victims}
        self.free = trial
        self.releases = [r for r in self.releases if r[5] not in gone]
        for rj in victims:
            self.running_gpus[rj.user] -= rj.gpus
            del self.jobs[rj.job_id]
            self.partitions.pop(f"{rj.job_id}@{rj.start_s}", None)
            self.decision.preemptions.append(rj.job_id)

    # -- the cycle
    def run(self, queue: Iterable[QueueEntry]) -> ScheduleDecision:
        head: QueueEntry | None = None
        t_r = 0
        extra: list[int] | None = None
        for entry in queue:
            if not check_quota(entry, self.account(entry.user),
                               self.running_gpus[entry.user]):
                continue
            need = entry.resources.as_tuple()
            if head is None:
                picked = kernels.first_fit(self.free, need, entry.nodes)
                if picked is not None:
                    self.start(entry, picked, backfill=False)
                    continue
                if self.try_gang_join(entry):
                    continue
                if self.policy.preemption_enabled and entry.qos == "high":
                    found = self.select_victims(entry)
                    if found is not None:
                        victims, trial, picked = found
                        self.preempt(victims, trial)
                        self.start(entry, picked, backfill=False)
                        continue
                res = kernels.earliest_fit(self.free, self.sorted_releases(), need,
                                           entry.nodes, self.now)
                if res is None:
                    continue
                t_r, idx, free_at = res
                head = entry
                self.decision.reservation = Reservation(
                    entry.job_id, int(t_r), tuple(self.names[i] for i in idx))
                extra = list(free_at)
                self._take(extra, idx, need)
                continue
            if not self.policy.backfill_enabled:
                self.try_gang_join(entry)
                continue
            ends_before = self.now + entry.walltime_s <= t_r
            picked = kernels.first_fit(self.free, need, entry.nodes,
                                       None if ends_before else extra)
            if picked is not None:
                self.start(entry, picked, backfill=True)
                if not ends_before:
                    self._take(extra, picked, need)
            else:
                self.try_gang_join(entry)
        self._rotate_gangs()
        return self.decision

    @staticmethod
    def _take(vec: list[int], picked: Sequence[int], need: Sequence[int]) -> None:
        for i in picked:
            o = i * kernels.WIDTH
            vec[o] -= need[0]
            vec[o + 1] -= need[1]
            vec[o + 2] -= need[2]

    def _rotate_gangs(self) -> None:
        for key in sorted(self.partitions):
            part = self.partitions[key]
            self.decision.gang_ops.extend(gang_rotate(
                part.gangs, self.now, self.policy.quantum_s, part.last_switch, part.active))


def schedule_cycle(queue: Iterable[QueueEntry], cluster: ClusterState,
                   accounts: Mapping[str, AccountState], policy: Policy = Policy(),
                   partitions: Iterable[GangPartition] = ()) -> ScheduleDecision:
    """Decide which queued entries start now.

    ``queue`` must already be in priority order (see ``order_queue``).
    Entries that fit free resources start in order; the first that does not
    becomes the head and gets a reservation at the earliest time enough
    running jobs have finished.  Later entries may start early only if they
    end before that time or fit in what the reservation leaves over.
    """
    return _Cycle(cluster, accounts, policy, partitions).run(queue)
