"""Brute-force EASY-backfill reference, written without the engine's code.

Time advances one integer second at a time.  At each second: jobs whose
end time has come release their nodes, arrivals join the queue, then the
queue is walked in priority order.  Reservations are found by stepping
forward second by second and recomputing projected free capacity from
scratch.  Slow but obviously correct at the sizes used in tests.
"""
from __future__ import annotations

from dataclasses import dataclass

AGE_MAX = 7 * 86_400
QOS = {"high": 1.0, "normal": 0.5, "preemptible": 0.0}


@dataclass(frozen=True)
class RefJob:
    job_id: str
    submit: int
    need: tuple[int, int, int]
    nodes: int
    wall: int
    qos: str = "normal"


def priority(job: RefJob, now: int) -> float:
    # every account has zero usage in these workloads, so the fair-share term is 2^0
    age = min((now - job.submit) / AGE_MAX, 1.0)
    return 1000 * age + 2000 * 1.0 + 4000 * QOS[job.qos]


def _covers(have, need) -> bool:
    return all(h >= n for h, n in zip(have, need))


def _first_fit(free: list[list[int]], need, count, also=None):
    picked = []
    for i, f in enumerate(free):
        if _covers(f, need) and (also is None or _covers(also[i], need)):
            picked.append(i)
            if len(picked) == count:
                return picked
    return None


def _projected(caps, running, t):
    """Free capacity per node at time t if every running job ends at its end."""
    free = [list(c) for c in caps]
    for end, placement, need in running.values():
        if end > t:
            for i in placement:
                for k in range(3):
                    free[i][k] -= need[k]
    return free


def run(jobs: list[RefJob], caps: list[tuple[int, int, int]], backfill: bool = True,
        horizon: int = 100_000) -> dict[str, int]:
    """Start time of every job.  ``caps`` are node capacities in name order."""
    running: dict[str, tuple[int, list[int], tuple]] = {}
    starts: dict[str, int] = {}
    queue: list[RefJob] = []
    todo = sorted(jobs, key=lambda j: (j.submit, j.job_id))
    for now in range(horizon):
        for jid in [j for j, (end, _, _) in running.items() if end <= now]:
            del running[jid]
        while todo and todo[0].submit == now:
            queue.append(todo.pop(0))
        if not todo and not queue and not running:
            return starts
        order = sorted(queue, key=lambda j: (-priority(j, now), j.submit, j.job_id))
        free = _projected(caps, running, now)
        head = None
        t_r = None
        shadow = None
        for job in order:
            if head is None:
                picked = _first_fit(free, job.need, job.nodes)
                if picked is not None:
                    starts[job.job_id] = now
                    running[job.job_id] = (now + job.wall, picked, job.need)
                    free = _projected(caps, running, now)
                    continue
                t = now
                while True:
                    at_t = _projected(caps, running, t)
                    spot = _first_fit(at_t, job.need, job.nodes)
                    if spot is not None:
                        break
                    t += 1
                head, t_r = job, t
                shadow = at_t
                for i in spot:
                    for k in range(3):
                        shadow[i][k] -= job.need[k]
                continue
            if not backfill:
                break
            ends_before = now + job.wall <= t_r
            picked = _first_fit(free, job.need, job.nodes, None if ends_before else shadow)
            if picked is None:
                continue
            starts[job.job_id] = now
            running[job.job_id] = (now + job.wall, picked, job.need)
            free = _projected(caps, running, now)
            if not ends_before:
                for i in picked:
                    for k in range(3):
                        shadow[i][k] -= job.need[k]
        queue = [j for j in queue if j.job_id not in starts]
    raise RuntimeError("reference simulation did not finish")


def timeline(jobs: list[RefJob], starts: dict[str, int], placements: dict[str, tuple[int, ...]],
             caps: list[tuple[int, int, int]]) -> bool:
    """True when no node is oversubscribed at any integer instant."""
    if not starts:
        return True
    end = max(starts[j.job_id] + j.wall for j in jobs)
    by_id = {j.job_id: j for j in jobs}
    for t in range(end + 1):
        used = [[0, 0, 0] for _ in caps]
        for jid, s in starts.items():
            job = by_id[jid]
            if s <= t < s + job.wall:
                for i in placements[jid]:
                    for k in range(3):
                        used[i][k] += job.need[k]
        for u, c in zip(used, caps):
            if any(a > b for a, b in zip(u, c)):
                return False
    return True


def random_workload(rng) -> tuple[list[tuple[int, int, int]], list[RefJob]]:
    """Up to 20 jobs on up to 4 nodes with up to 8 GPUs each; every job is placeable."""
    nn = rng.randint(1, 4)
    caps = [(rng.choice([4, 8, 16]), rng.randint(1, 8), rng.choice([8192, 16384]))
            for _ in range(nn)]
    jobs = []
    for k in range(rng.randint(1, 20)):
        nodes = rng.randint(1, nn)
        fit = sorted(caps, key=lambda c: c[1], reverse=True)[:nodes]
        c = min(x[0] for x in fit)
        g = min(x[1] for x in fit)
        m = min(x[2] for x in fit)
        need = (rng.randint(1, c), rng.randint(0, g), rng.randint(1, m // 1024) * 1024)
        if sum(all(a >= b for a, b in zip(cap, need)) for cap in caps) < nodes:
            continue
        jobs.append(RefJob(f"j{k:02d}", rng.randint(0, 60), need, nodes, rng.randint(1, 50),
                           rng.choice(["normal", "high"])))
    return caps, jobs
