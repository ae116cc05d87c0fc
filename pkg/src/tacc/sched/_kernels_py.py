"""Pure-Python placement kernels.

Resource vectors are flat integer lists, three slots per node in name
order: ``[cpus0, gpus0, mem0, cpus1, ...]``.  The compiled extension in
``_kernels.pyx`` implements the same two functions with identical results.
"""
from __future__ import annotations

from typing import Sequence

WIDTH = 3


def first_fit(free: Sequence[int], need: Sequence[int], count: int,
              extra: Sequence[int] | None = None) -> list[int] | None:
    """Indices of the first ``count`` nodes whose free vector covers ``need``.

    With ``extra``, a node must also cover ``need`` in that second vector
    (capacity left over after a reservation).
    """
    c, g, m = need[0], need[1], need[2]
    picked: list[int] = []
    for i in range(len(free) // WIDTH):
        o = i * WIDTH
        if free[o] < c or free[o + 1] < g or free[o + 2] < m:
            continue
        if extra is not None and (extra[o] < c or extra[o + 1] < g or extra[o + 2] < m):
            continue
        picked.append(i)
        if len(picked) == count:
            return picked
    return None


def earliest_fit(free: Sequence[int], releases: Sequence[int], need: Sequence[int],
                 count: int, now: int):
    """Earliest time a ``count``-node request fits as allocations are released.

    ``releases`` is a flat list of ``(time, node, cpus, gpus, mem)`` records
    sorted by time.  Returns ``(time, node_indices, free_at_time)`` or None
    when the request never fits.
    """
    avail = list(free)
    picked = first_fit(avail, need, count)
    if picked is not None:
        return now, picked, avail
    n = len(releases) // 5
    i = 0
    while i < n:
        t = releases[i * 5]
        while i < n and releases[i * 5] == t:
            o = releases[i * 5 + 1] * WIDTH
            avail[o] += releases[i * 5 + 2]
            avail[o + 1] += releases[i * 5 + 3]
            avail[o + 2] += releases[i * 5 + 4]
            i += 1
        picked = first_fit(avail, need, count)
        if picked is not None:
            return max(t, now), picked, avail
    return None
