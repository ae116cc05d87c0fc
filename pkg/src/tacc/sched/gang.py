"""Round-robin time slicing of gangs that share one partition."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

from ..schema import ResourceReq


@dataclass(frozen=True)
class GangPartition:
    """Gangs that take turns on the same nodes with the same per-node shape.

    Only ``gangs[active]`` holds the allocation; the others are suspended.
    """

    key: str
    placement: tuple[str, ...]
    resources: ResourceReq
    gangs: tuple[tuple[str, ...], ...]
    active: int = 0
    last_switch: int = 0

    def members(self) -> list[str]:
        return [j for g in self.gangs for j in g]

    def rotated(self, now: int) -> GangPartition:
        return replace(self, active=(self.active + 1) % len(self.gangs), last_switch=now)


def gang_rotate(gangs: Sequence[Sequence[str]], now: float, quantum: float,
                last_switch: float, active: int = 0) -> list[tuple[str, str]]:
    """Suspend the active gang and resume the next once a quantum has elapsed."""
    if quantum <= 0:
        raise ValueError("quantum must be positive")
    if len(gangs) < 2 or now - last_switch < quantum:
        return []
    nxt = (active + 1) % len(gangs)
    ops = [(job, "suspend") for job in gangs[active]]
    ops += [(job, "resume") for job in gangs[nxt]]
    return ops
