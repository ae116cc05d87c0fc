
import pytest
from hypothesis import given, settings, strategies as st

from reference_sim import RefJob, run as ref_run
from tacc.schema import ResourceReq
from tacc.sched import (AccountState, Allocation, ClusterState, GangPartition, NodeState,
                        Policy, PolicyWeights, QueueEntry, Quota, check_queue_quota,
                        check_quota, compute_priority, decay_usage, fair_share_factor,
                        gang_rotate, load_policy, order_queue, schedule_cycle)
from tacc.sched.simulate import SimJob, simulate


def R(c=1, g=0, m=1):
    return ResourceReq(c, g, m)


def entry(job_id, g=1, wall=50, nodes=1, submit=0, qos="normal", user="u", c=1):
    return QueueEntry(job_id, user, R(c, g, 1), nodes, wall, submit, qos)


def cluster(nodes, now=0):
    return ClusterState([NodeState(name, cap, list(allocs)) for name, cap, allocs in nodes], now)


# -- fair share and priority -------------------------------------------------

def test_decay_examples():
    a = [AccountState("x", decayed_usage=1000.0)]
    assert decay_usage(a, 86400, 86400)[0].decayed_usage == 500.0
    assert decay_usage(a, 0, 86400)[0].decayed_usage == 1000.0
    assert decay_usage(a, 2 * 86400, 86400)[0].decayed_usage == 250.0


def test_fair_share_examples():
    a = AccountState("a", decayed_usage=750.0)
    b = AccountState("b", decayed_usage=250.0)
    z = AccountState("z", decayed_usage=0.0)
    assert fair_share_factor(z, [a, z]) == 1.0
    assert fair_share_factor(a, [a, b]) == pytest.approx(2 ** -1.5, abs=1e-12)
    assert fair_share_factor(b, [a, b]) == pytest.approx(2 ** -0.5, abs=1e-12)
    even = [AccountState("p", decayed_usage=5.0), AccountState("q", decayed_usage=5.0)]
    assert fair_share_factor(even[0], even) == 0.5
    assert fair_share_factor(a, [AccountState("a")]) == 1.0


@given(st.floats(0, 1e6), st.floats(1, 1e6), st.floats(0.1, 10), st.floats(0.1, 10))
def test_fair_share_monotone(u, delta, w1, w2):
    other = AccountState("o", share_weight=w2, decayed_usage=100.0)
    lo = AccountState("me", share_weight=w1, decayed_usage=u)
    hi = AccountState("me", share_weight=w1, decayed_usage=u + delta)
    f_lo, f_hi = fair_share_factor(lo, [lo, other]), fair_share_factor(hi, [hi, other])
    assert 0 < f_hi <= 1 and 0 < f_lo <= 1
    assert f_hi < f_lo


def test_priority_examples():
    acct = AccountState("u")
    e = entry("j", qos="high")
    assert compute_priority(e, acct, [acct], 0) == 6000
    normal = compute_priority(entry("j"), acct, [acct], 0)
    assert compute_priority(e, acct, [acct], 0) - normal == 4000 * 0.5
    old = compute_priority(entry("j", submit=0), acct, [acct], 14 * 86400)
    assert old == 1000 + 2000 + 2000


@settings(max_examples=100)
@given(st.lists(st.tuples(st.integers(0, 10**6), st.sampled_from(["high", "normal",
                                                                  "preemptible"]),
                          st.sampled_from(["a", "b", "c"])), min_size=1, max_size=8),
       st.floats(0.01, 100))
def test_priority_order_invariant_under_scaling(jobs, c):
    accounts = {u: AccountState(u, decayed_usage=float(i * 37))
                for i, u in enumerate("abc")}
    entries = [entry(f"j{i}", submit=s, qos=q, user=u) for i, (s, q, u) in enumerate(jobs)]
    now = 10**6
    base = PolicyWeights()
    a = [e.job_id for e in order_queue(entries, accounts, now, base)]
    b = [e.job_id for e in order_queue(entries, accounts, now, base.scaled(c))]
    # ties are broken by submit time and id; scaling can only expose float noise
    pa = {e.job_id: e.priority for e in order_queue(entries, accounts, now, base)}
    if len(set(round(p, 6) for p in pa.values())) == len(pa):
        assert a == b


def test_quota_examples():
    acct = AccountState("u", quota=Quota(max_running_gpus=8, max_queued_jobs=100))
    assert check_quota(entry("j", g=2), acct, 6)
    verdict = check_quota(entry("j", g=4), acct, 6)
    assert not verdict and "QUOTA_EXCEEDED" in verdict.reason
    assert not check_queue_quota(acct, 100)
    assert check_queue_quota(acct, 99)


# -- schedule_cycle ------------------------------------------------------------

def test_backfill_example():
    r1 = Allocation("R1", R(1, 3, 1), 100)
    c = cluster([("n1", R(8, 4, 1000), [r1])])
    q = [entry("J1", g=4, wall=50), entry("J2", g=1, wall=80), entry("J3", g=1, wall=200)]
    d = schedule_cycle(q, c, {})
    assert d.reservation.job_id == "J1" and d.reservation.t_r == 100
    assert [s.job_id for s in d.starts] == ["J2"]
    assert d.backfills == ["J2"]


def test_empty_cluster_starts_job():
    d = schedule_cycle([entry("J")], cluster([("n1", R(8, 4, 100), [])]), {})
    assert [s.job_id for s in d.starts] == ["J"] and d.reservation is None
    assert d.starts[0].placement == ("n1",)


def test_preemption_example():
    victim = Allocation("P", R(1, 4, 1), 1000, "v", "preemptible", 10.0, 0)
    c = cluster([("n1", R(8, 4, 100), [victim])], now=5)
    d = schedule_cycle([entry("H", g=4, qos="high")], c, {}, Policy(preemption_enabled=True))
    assert d.preemptions == ["P"]
    assert [s.job_id for s in d.starts] == ["H"]
    d_off = schedule_cycle([entry("H", g=4, qos="high")], c, {}, Policy())
    assert d_off.preemptions == [] and d_off.starts == []


def test_preemption_picks_fewest_then_lowest_priority():
    allocs = [Allocation("small1", R(1, 1, 1), 900, "v", "preemptible", 5.0, 1),
              Allocation("small2", R(1, 1, 1), 900, "v", "preemptible", 1.0, 2),
              Allocation("big", R(1, 2, 1), 900, "v", "preemptible", 9.0, 3)]
    c = cluster([("n1", R(8, 4, 100), allocs)], now=10)
    d = schedule_cycle([entry("H", g=2, qos="high")], c, {}, Policy(preemption_enabled=True))
    assert d.preemptions == ["big"]
    d = schedule_cycle([entry("H", g=1, qos="high")], c, {}, Policy(preemption_enabled=True))
    assert d.preemptions == ["small2"]


def test_quota_blocks_start():
    accounts = {"u": AccountState("u", quota=Quota(max_running_gpus=1))}
    d = schedule_cycle([entry("a", g=1), entry("b", g=1)], cluster([("n1", R(8, 4, 10), [])]),
                       accounts)
    assert [s.job_id for s in d.starts] == ["a"]


def test_multi_node_first_fit_by_name():
    c = cluster([("b", R(8, 4, 10), []), ("a", R(8, 4, 10), []), ("c", R(8, 1, 10), [])])
    d = schedule_cycle([entry("J", g=2, nodes=2)], c, {})
    assert d.starts[0].placement == ("a", "b")


def test_gang_join_and_rotation():
    alloc = Allocation("P1", R(8, 4, 1), 500, "u", "preemptible", 0.0, 0)
    c = cluster([("n1", R(8, 4, 10), [alloc])], now=5)
    d = schedule_cycle([entry("P2", g=4, c=8, qos="preemptible")], c, {})
    assert [(j.job_id, j.partition) for j in d.gang_joins] == [("P2", "P1@0")]
    assert d.gang_ops == []
    part = GangPartition("P1@0", ("n1",), R(8, 4, 1), (("P1",), ("P2",)), 0, 5)
    d = schedule_cycle([], cluster([("n1", R(8, 4, 10), [alloc])], now=35), {},
                       partitions=[part])
    assert d.gang_ops == [("P1", "suspend"), ("P2", "resume")]
    d = schedule_cycle([], cluster([("n1", R(8, 4, 10), [alloc])], now=34), {},
                       partitions=[part])
    assert d.gang_ops == []


def test_gang_rotate_examples():
    assert gang_rotate([["a"]], 100, 30, 0) == []
    assert gang_rotate([["a"], ["b"]], 29, 30, 0) == []
    assert gang_rotate([["a"], ["b"]], 30, 30, 0, active=1) == [("b", "suspend"), ("a", "resume")]


def test_gang_rotation_shares_time_evenly():
    # two whole-node gangs with a 30 s quantum over 300 s
    gangs, active, last = [["g0"], ["g1"]], 0, 0
    run = [0, 0]
    for t in range(300):
        ops = gang_rotate(gangs, t, 30, last, active)
        if ops:
            active, last = (active + 1) % 2, t
        run[active] += 1
    assert all(abs(r - 150) <= 30 for r in run)


def test_policy_file_round_trip(tmp_path):
    p = tmp_path / "policy.json"
    p.write_text('{"weights": {"age": 1, "fairshare": 2, "qos": 3}, "half_life_s": 10,'
                 ' "quantum_s": 5, "preemption_enabled": true,'
                 ' "quotas": {"alice": {"max_running_gpus": 4}}}')
    pol = load_policy(p)
    assert pol.weights.qos == 3 and pol.preemption_enabled and pol.quantum_s == 5
    assert pol.quota_for("alice").max_running_gpus == 4
    assert Policy.from_dict(pol.to_dict()) == pol


# -- properties against the simulated cluster ---------------------------------

@st.composite
def workloads(draw, max_jobs=12, max_nodes=4):
    nn = draw(st.integers(1, max_nodes))
    caps = [(8, draw(st.integers(1, 8)), 64) for _ in range(nn)]
    jobs = []
    for k in range(draw(st.integers(1, max_jobs))):
        nodes = draw(st.integers(1, nn))
        g = draw(st.integers(0, sorted((c[1] for c in caps), reverse=True)[nodes - 1]))
        jobs.append(RefJob(f"j{k:02d}", draw(st.integers(0, 40)),
                           (draw(st.integers(1, 8)), g, draw(st.integers(1, 64))),
                           nodes, draw(st.integers(1, 40)),
                           draw(st.sampled_from(["normal", "high"]))))
    return caps, jobs


def _sim(caps, jobs, policy=Policy()):
    nodes = [(f"n{i}", R(*c)) for i, c in enumerate(caps)]
    return simulate([SimJob(j.job_id, j.submit, R(*j.need), j.wall, j.nodes, qos=j.qos)
                     for j in jobs], nodes, policy)


@settings(max_examples=150, deadline=None)
@given(workloads())
def test_matches_reference_simulator(w):
    caps, jobs = w
    assert _sim(caps, jobs).starts == ref_run(jobs, caps)
    assert _sim(caps, jobs, Policy(backfill_enabled=False)).starts == ref_run(jobs, caps, False)


@settings(max_examples=100, deadline=None)
@given(workloads(max_jobs=20, max_nodes=6))
def test_backfill_never_delays_first_head(w):
    caps, jobs = w
    jobs = [RefJob(j.job_id, j.submit, j.need, j.nodes, j.wall, "normal") for j in jobs]
    on = _sim(caps, jobs)
    off = _sim(caps, jobs, Policy(backfill_enabled=False))
    first = on.first_reservation()
    if first is not None:
        assert on.starts[first[1]] <= off.starts[first[1]]


@st.composite
def snapshots(draw):
    nn = draw(st.integers(1, 4))
    nodes = []
    for i in range(nn):
        cap = R(8, draw(st.integers(0, 8)), 64)
        allocs, used = [], [0, 0, 0]
        for k in range(draw(st.integers(0, 3))):
            r = R(draw(st.integers(1, 4)), draw(st.integers(0, 4)), draw(st.integers(1, 32)))
            if used[0] + r.cpus > 8 or used[1] + r.gpus > cap.gpus or used[2] + r.mem_mib > 64:
                continue
            used = [used[0] + r.cpus, used[1] + r.gpus, used[2] + r.mem_mib]
            allocs.append(Allocation(f"r{i}{k}", r, draw(st.integers(1, 100)), "v",
                                     draw(st.sampled_from(["normal", "preemptible"])),
                                     float(draw(st.integers(0, 9))), 0))
        nodes.append((f"n{i}", cap, allocs))
    queue = [QueueEntry(f"q{k}", "u", R(draw(st.integers(1, 8)), draw(st.integers(0, 8)),
                                        draw(st.integers(1, 64))),
                        draw(st.integers(1, nn)), draw(st.integers(1, 100)), 0,
                        draw(st.sampled_from(["normal", "high", "preemptible"])))
             for k in range(draw(st.integers(0, 6)))]
    return nodes, queue


@settings(max_examples=200, deadline=None)
@given(snapshots(), st.booleans())
def test_cycle_invariants(snap, preempt):
    nodes, queue = snap
    policy = Policy(preemption_enabled=preempt)
    c = cluster(nodes, now=0)
    d1 = schedule_cycle(queue, c, {}, policy)
    d2 = schedule_cycle(queue, cluster(nodes, now=0), {}, policy)
    assert d1.to_dict() == d2.to_dict()
    started = {s.job_id for s in d1.starts}
    assert not started & set(d1.preemptions)
    assert set(d1.backfills) <= started
    # no oversubscription once victims leave and starts land
    by_q = {q.job_id: q for q in queue}
    for name, cap, allocs in nodes:
        used = [0, 0, 0]
        for a in allocs:
            if a.job_id not in d1.preemptions:
                used = [x + y for x, y in zip(used, a.resources.as_tuple())]
        for s in d1.starts:
            if name in s.placement:
                used = [x + y for x, y in zip(used, by_q[s.job_id].resources.as_tuple())]
        assert all(u <= k for u, k in zip(used, cap.as_tuple()))
    # work conservation: if the first entry fits free capacity, it starts
    if queue and not d1.starts and not d1.gang_joins:
        q = queue[0]
        fits = sum(1 for _, cap, allocs in nodes
                   if q.resources.fits_in(cap - sum((a.resources for a in allocs), R(0, 0, 0))))
        assert fits < q.nodes


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(1, 4), st.integers(0, 9)),
                min_size=1, max_size=8),
       st.integers(1, 8), st.integers(1, 3))
def test_preemption_minimality(victims, head_gpus, head_nodes):
    caps = {f"n{i}": R(8, 8, 64) for i in range(3)}
    used = {n: 0 for n in caps}
    allocs = {n: [] for n in caps}
    for k, (node, g, prio) in enumerate(victims):
        name = f"n{node}"
        if used[name] + g > 8:
            continue
        used[name] += g
        allocs[name].append(Allocation(f"p{k}", R(1, g, 1), 1000, "v", "preemptible",
                                       float(prio), k))
    nodes = [(n, caps[n], allocs[n]) for n in sorted(caps)]
    head = QueueEntry("H", "u", R(1, head_gpus, 1), head_nodes, 10, 0, "high")
    d = schedule_cycle([head], cluster(nodes, now=50), {}, Policy(preemption_enabled=True))
    if not d.preemptions:
        return
    assert [s.job_id for s in d.starts] == ["H"]

    def fits_without(gone):
        hosts = 0
        for n, cap, al in nodes:
            free = cap - sum((a.resources for a in al if a.job_id not in gone), R(0, 0, 0))
            hosts += head.resources.fits_in(free)
        return hosts >= head.nodes

    assert fits_without(set(d.preemptions))
    for drop in d.preemptions:
        assert not fits_without(set(d.preemptions) - {drop})
