"""Scheduler inputs and outputs, plus the ``policy.json`` format."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Any

from ..errors import SchemaInvalid
from ..schema import ResourceReq

DAY_S = 86_400
QOS_NORM = {"high": 1.0, "normal": 0.5, "preemptible": 0.0}


@dataclass(frozen=True)
class Allocation:
    job_id: str
    resources: ResourceReq
    est_end_s: int
    user: str = ""
    qos: str = "normal"
    priority: float = 0.0
    start_s: int = 0


@dataclass
class NodeState:
    name: str
    capacity: ResourceReq
    allocations: list[Allocation] = field(default_factory=list)

    def used(self) -> ResourceReq:
        total = ResourceReq(0, 0, 0)
        for a in self.allocations:
            total = total + a.resources
        return total

    def free(self) -> ResourceReq:
        return self.capacity - self.used()


@dataclass
class ClusterState:
    nodes: list[NodeState]
    now: int = 0

    def __post_init__(self):
        names = [n.name for n in self.nodes]
        if len(set(names)) != len(names):
            raise ValueError("node names must be unique")

    def sorted_nodes(self) -> list[NodeState]:
        return sorted(self.nodes, key=lambda n: n.name)


@dataclass(frozen=True)
class Quota:
    max_running_gpus: int | None = None
    max_queued_jobs: int | None = None

    def to_dict(self) -> dict:
        return {"max_running_gpus": self.max_running_gpus,
                "max_queued_jobs": self.max_queued_jobs}


@dataclass(frozen=True)
class AccountState:
    user: str
    share_weight: float = 1.0
    decayed_usage: float = 0.0
    quota: Quota = Quota()

    def __post_init__(self):
        if self.share_weight <= 0:
            raise ValueError("share_weight must be positive")
        if self.decayed_usage < 0:
            raise ValueError("decayed_usage must be non-negative")


@dataclass(frozen=True)
class QueueEntry:
    job_id: str
    user: str
    resources: ResourceReq
    nodes: int = 1
    walltime_s: int = 3600
    submit_time_s: int = 0
    qos: str = "normal"
    priority: float = 0.0


@dataclass(frozen=True)
class Start:
    job_id: str
    placement: tuple[str, ...]
    resources: ResourceReq
    backfill: bool = False

    def to_dict(self) -> dict:
        return {"job_id": self.job_id, "placement": list(self.placement),
                "resources": self.resources.to_dict(), "backfill": self.backfill}


@dataclass(frozen=True)
class Reservation:
    job_id: str
    t_r: int
    placement: tuple[str, ...]

    def to_dict(self) -> dict:
        return {"job_id": self.job_id, "t_r": self.t_r, "placement": list(self.placement)}


@dataclass(frozen=True)
class GangJoin:
    job_id: str
    partition: str
    placement: tuple[str, ...]
    resources: ResourceReq

    def to_dict(self) -> dict:
        return {"job_id": self.job_id, "partition": self.partition,
                "placement": list(self.placement), "resources": self.resources.to_dict()}


@dataclass
class ScheduleDecision:
    starts: list[Start] = field(default_factory=list)
    preemptions: list[str] = field(default_factory=list)
    reservation: Reservation | None = None
    gang_ops: list[tuple[str, str]] = field(default_factory=list)
    gang_joins: list[GangJoin] = field(default_factory=list)

    @property
    def backfills(self) -> list[str]:
        return [s.job_id for s in self.starts if s.backfill]

    @property
    def empty(self) -> bool:
        return not (self.starts or self.preemptions or self.gang_ops or self.gang_joins)

    def to_dict(self) -> dict:
        return {
            "starts": [s.to_dict() for s in self.starts],
            "backfills": self.backfills,
            "preemptions": list(self.preemptions),
            "reservation": self.reservation.to_dict() if self.reservation else None,
            "gang_ops": [[j, op] for j, op in self.gang_ops],
            "gang_joins": [g.to_dict() for g in self.gang_joins],
        }


@dataclass(frozen=True)
class PolicyWeights:
    age: float = 1000.0
    fairshare: float = 2000.0
    qos: float = 4000.0
    age_max_s: int = 7 * DAY_S

    def scaled(self, c: float) -> PolicyWeights:
        return PolicyWeights(self.age * c, self.fairshare * c, self.qos * c, self.age_max_s)


@dataclass(frozen=True)
class Policy:
    weights: PolicyWeights = PolicyWeights()
    half_life_s: float = DAY_S
    quantum_s: int = 30
    preemption_enabled: bool = False
    backfill_enabled: bool = True
    gang_enabled: bool = True
    max_gangs: int = 4
    grace_s: float = 10.0
    walltime_grace: float = 1.25
    shares: dict[str, float] = field(default_factory=dict)
    quotas: dict[str, Quota] = field(default_factory=dict)
    default_quota: Quota = Quota()

    def quota_for(self, user: str) -> Quota:
        return self.quotas.get(user, self.default_quota)

    def share_for(self, user: str) -> float:
        return self.shares.get(user, 1.0)

    def to_dict(self) -> dict:
        return {
            "weights": {"age": self.weights.age, "fairshare": self.weights.fairshare,
                        "qos": self.weights.qos, "age_max_s": self.weights.age_max_s},
            "half_life_s": self.half_life_s,
            "quantum_s": self.quantum_s,
            "preemption_enabled": self.preemption_enabled,
            "backfill_enabled": self.backfill_enabled,
            "gang_enabled": self.gang_enabled,
            "max_gangs": self.max_gangs,
            "grace_s": self.grace_s,
            "walltime_grace": self.walltime_grace,
            "shares": dict(self.shares),
            "quotas": {u: q.to_dict() for u, q in sorted(self.quotas.items())},
            "default_quota": self.default_quota.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> Policy:
        known = set(cls().to_dict())
        unknown = set(doc) - known
        if unknown:
            raise SchemaInvalid("unknown policy field", field=sorted(unknown)[0])
        w = doc.get("weights", {})
        weights = PolicyWeights(
            age=float(w.get("age", 1000.0)),
            fairshare=float(w.get("fairshare", 2000.0)),
            qos=float(w.get("qos", 4000.0)),
            age_max_s=int(w.get("age_max_s", 7 * DAY_S)),
        )

        def quota(d: dict | None) -> Quota:
            d = d or {}
            return Quota(d.get("max_running_gpus"), d.get("max_queued_jobs"))

        policy = cls(
            weights=weights,
            half_life_s=float(doc.get("half_life_s", DAY_S)),
            quantum_s=int(doc.get("quantum_s", 30)),
            preemption_enabled=bool(doc.get("preemption_enabled", False)),
            backfill_enabled=bool(doc.get("backfill_enabled", True)),
            gang_enabled=bool(doc.get("gang_enabled", True)),
            max_gangs=int(doc.get("max_gangs", 4)),
            grace_s=float(doc.get("grace_s", 10.0)),
            walltime_grace=float(doc.get("walltime_grace", 1.25)),
            shares={u: float(v) for u, v in doc.get("shares", {}).items()},
            quotas={u: quota(q) for u, q in doc.get("quotas", {}).items()},
            default_quota=quota(doc.get("default_quota")),
        )
        if policy.half_life_s <= 0 or policy.quantum_s <= 0:
            raise SchemaInvalid("half_life_s and quantum_s must be positive")
        return policy


def load_policy(path: str | os.PathLike) -> Policy:
    with open(path, encoding="utf-8") as fh:
        return Policy.from_dict(json.load(fh))
