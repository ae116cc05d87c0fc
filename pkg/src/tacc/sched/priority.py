"""Fair-share accounting, multifactor priority, and quota checks."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterable, Mapping

from .model import QOS_NORM, AccountState, PolicyWeights, QueueEntry


def usage_rate(cpus: int, gpus: int) -> float:
    """Resource-seconds charged per second of runtime (per node)."""
    return gpus + 0.1 * cpus


def decay_usage(accounts: Iterable[AccountState], dt: float,
                half_life: float) -> list[AccountState]:
    if dt < 0 or half_life <= 0:
        raise ValueError("need dt >= 0 and half_life > 0")
    factor = 0.5 ** (dt / half_life)
    return [dataclasses.replace(a, decayed_usage=a.decayed_usage * factor)
            for a in accounts]


def fair_share_factor(user: AccountState, accounts: Iterable[AccountState]) -> float:
    """``2 ** -(usage_fraction / share_fraction)``; 1.0 when nobody has usage."""
    accounts = list(accounts)
    total_w = sum(a.share_weight for a in accounts)
    if total_w <= 0:
        raise ValueError("total share weight must be positive")
    total_u = sum(a.decayed_usage for a in accounts)
    if total_u == 0:
        return 1.0
    u = user.decayed_usage / total_u
    s = user.share_weight / total_w
    return 2.0 ** (-u / s)


def compute_priority(entry: QueueEntry, account: AccountState,
                     accounts: Iterable[AccountState], now: float,
                     weights: PolicyWeights = PolicyWeights()) -> float:
    age = max(0.0, now - entry.submit_time_s)
    age_term = min(age / weights.age_max_s, 1.0)
    return (weights.age * age_term
            + weights.fairshare * fair_share_factor(account, accounts)
            + weights.qos * QOS_NORM[entry.qos])


def queue_key(entry: QueueEntry):
    return (-entry.priority, entry.submit_time_s, entry.job_id)


def order_queue(entries: Iterable[QueueEntry], accounts: Mapping[str, AccountState],
                now: float, weights: PolicyWeights = PolicyWeights()) -> list[QueueEntry]:
    """Score every entry and sort by priority, then submit time, then job id."""
    pool = list(accounts.values())
    scored = []
    for e in entries:
        acct = accounts.get(e.user) or AccountState(e.user)
        members = pool if e.user in accounts else pool + [acct]
        scored.append(dataclasses.replace(
            e, priority=compute_priority(e, acct, members, now, weights)))
    scored.sort(key=queue_key)
    return scored


@dataclass(frozen=True)
class Verdict:
    admit: bool
    reason: str = ""

    def __bool__(self) -> bool:
        return self.admit


def check_quota(entry: QueueEntry, account: AccountState, running_gpus: int) -> Verdict:
    """Would starting ``entry`` push its user over ``max_running_gpus``?"""
    limit = account.quota.max_running_gpus
    want = entry.resources.gpus * entry.nodes
    if limit is not None and running_gpus + want > limit:
        return Verdict(False, f"QUOTA_EXCEEDED: {running_gpus} + {want} GPUs > {limit}")
    return Verdict(True)


def check_queue_quota(account: AccountState, queued_jobs: int) -> Verdict:
    """Enqueue-time variant: deny once the user already has ``max_queued_jobs``."""
    limit = account.quota.max_queued_jobs
    if limit is not None and queued_jobs >= limit:
        return Verdict(False, f"QUOTA_EXCEEDED: {queued_jobs} jobs queued, limit {limit}")
    return Verdict(True)
