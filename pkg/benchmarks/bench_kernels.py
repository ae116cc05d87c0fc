"""Time the compiled placement kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py --nodes 256 --repeat 2000

Also times a whole scheduler simulation with each implementation, to show
how much of a cycle the kernels account for at that size.
"""
from __future__ import annotations

import argparse
import os
import random
import subprocess
import sys
import timeit

from tacc.sched import _kernels_py

try:
    from tacc.sched import _kernels as compiled
except ImportError:
    compiled = None


def make_inputs(rng: random.Random, nodes: int, releases: int):
    free = [rng.randint(0, 64) if k % 3 == 0 else rng.randint(0, 8) if k % 3 == 1
            else rng.randint(0, 1 << 16) for k in range(3 * nodes)]
    recs = sorted((rng.randint(0, 10_000), rng.randrange(nodes), rng.randint(0, 8),
                   rng.randint(0, 4), rng.randint(0, 4096)) for _ in range(releases))
    flat = [x for r in recs for x in r]
    return free, flat


def bench_kernels(nodes: int, releases: int, repeat: int, seed: int) -> None:
    rng = random.Random(seed)
    free, flat = make_inputs(rng, nodes, releases)
    need, count = (32, 6, 20_000), max(1, nodes // 8)
    impls = [("python", _kernels_py)] + ([("compiled", compiled)] if compiled else [])
    print(f"nodes={nodes} releases={releases} repeat={repeat}")
    base = {}
    for label, mod in impls:
        for name, call in (
                ("first_fit", lambda m=mod: m.first_fit(free, need, count)),
                ("earliest_fit", lambda m=mod: m.earliest_fit(free, flat, need, count, 0))):
            secs = min(timeit.repeat(call, number=repeat, repeat=3)) / repeat
            speedup = ""
            if label == "python":
                base[name] = secs
            else:
                speedup = f"  x{base[name] / secs:.1f}"
            print(f"  {label:9s} {name:13s} {secs * 1e6:10.2f} us/call{speedup}")
    if compiled is None:
        print("  compiled extension not built; only the fallback was timed")


SIM_SNIPPET = """
import random, time
from tacc.schema import ResourceReq
from tacc.sched import Policy, kernels
from tacc.sched.simulate import SimJob, simulate
rng = random.Random({seed})
nodes = [(f"n{{i:03d}}", ResourceReq(32, 8, 1 << 18)) for i in range({nodes})]
jobs = [SimJob(f"j{{k:04d}}", rng.randint(0, 2000), ResourceReq(rng.randint(1, 32),
        rng.randint(0, 8), rng.randint(1, 1 << 16)), rng.randint(10, 500),
        rng.randint(1, 4)) for k in range({jobs})]
t0 = time.perf_counter()
simulate(jobs, nodes, Policy())
print(kernels.IMPLEMENTATION, time.perf_counter() - t0)
"""


def bench_simulation(nodes: int, jobs: int, seed: int) -> None:
    code = SIM_SNIPPET.format(seed=seed, nodes=nodes, jobs=jobs)
    print(f"simulate: nodes={nodes} jobs={jobs}")
    for pure in ("1", "0"):
        env = dict(os.environ, TACC_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                             text=True, check=True).stdout.split()
        print(f"  {out[0]:9s} {float(out[1]):8.3f} s")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--nodes", type=int, default=256)
    parser.add_argument("--releases", type=int, default=512)
    parser.add_argument("--repeat", type=int, default=500)
    parser.add_argument("--sim-nodes", type=int, default=32)
    parser.add_argument("--sim-jobs", type=int, default=400)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--skip-sim", action="store_true")
    args = parser.parse_args(argv)
    bench_kernels(args.nodes, args.releases, args.repeat, args.seed)
    if not args.skip_sim:
        bench_simulation(args.sim_nodes, args.sim_jobs, args.seed)
    return 0


if __name__ == "__main__":
    sys.exit(main())
