"""Scheduling layer: a pure decision engine over queue, cluster, and accounts."""
from .core import schedule_cycle
from .gang import GangPartition, gang_rotate
from .model import (AccountState, Allocation, ClusterState, NodeState, Policy,
                    PolicyWeights, QueueEntry, Quota, Reservation, ScheduleDecision,
                    Start, load_policy)
from .priority import (check_queue_quota, check_quota, compute_priority, decay_usage,
                       fair_share_factor, order_queue, usage_rate)

__all__ = [
    "AccountState", "Allocation", "ClusterState", "GangPartition", "NodeState",
    "Policy", "PolicyWeights", "QueueEntry", "Quota", "Reservation",
    "ScheduleDecision", "Start", "check_queue_quota", "check_quota",
    "compute_priority", "decay_usage", "fair_share_factor", "gang_rotate",
    "load_policy", "order_queue", "schedule_cycle", "usage_rate",
]
