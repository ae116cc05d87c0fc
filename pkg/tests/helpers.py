"""Shared builders for tests: workspaces, sim tasks, controllers."""
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Iterable

from tacc.bundle import build_bundle
from tacc.cas import ObjectStore
from tacc.controld import Controller, VirtualClock, parse_nodes
from tacc.exec import (BackendDescriptor, Capabilities, LocalProcessBackend, Registry,
                       SimulatedBackend)
from tacc.schema import ResourceReq, parse_task_spec
from tacc.sched import Policy

BIG = ResourceReq(64, 8, 1 << 20)


def write_tree(root: Path, files: dict[str, bytes | str], exec_paths: Iterable[str] = ()) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    for rel, data in files.items():
        p = root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_bytes(data.encode() if isinstance(data, str) else data)
    for rel in exec_paths:
        os.chmod(root / rel, 0o755)
    return root


def task_doc(name="t", user="alice", cpus=1, gpus=0, mem=256, nodes=1, wall=60, qos="normal",
             entrypoint="tacc-sim app/script.json", code_root="app", **extra) -> str:
    doc = {"name": name, "user": user,
           "resources": {"cpus": cpus, "gpus": gpus, "mem_mib": mem},
           "entrypoint": entrypoint, "code_root": code_root, "nodes": nodes,
           "walltime_estimate_s": wall, "qos": qos}
    doc.update(extra)
    return json.dumps(doc)


def sim_workspace(root: Path, script: list[dict] | None = None, **task) -> tuple[Path, str]:
    """A workspace holding ``app/script.json`` and ``task.json``; returns (root, doc)."""
    doc = task_doc(**task)
    write_tree(root, {"app/script.json": json.dumps(script or []), "task.json": doc})
    return root, doc


def make_registry(backends=(("sim0", "simulated"),), work_root: Path | None = None,
                  caps: ResourceReq = BIG) -> Registry:
    reg = Registry()
    for name, kind in backends:
        if kind == "simulated":
            be = SimulatedBackend(name)
        else:
            be = LocalProcessBackend(name, (work_root or Path("/tmp")) / name)
        reg.register(BackendDescriptor(name, kind, Capabilities(caps)), be)
    return reg


def make_controller(tmp: Path, nodes: str = "n1:8:4:8192,n2:8:4:8192",
                    backends=(("sim0", "simulated"),), policy: Policy = Policy(),
                    persist: bool = True, **kw) -> Controller:
    store = ObjectStore(tmp / "cas")
    reg = make_registry(backends, tmp / "work")
    return Controller(parse_nodes(nodes), reg, store, policy=policy, clock=VirtualClock(),
                      state_dir=(tmp / "state") if persist else None, **kw)


def submit_sim(ctl: Controller, root: Path, script: list[dict] | None = None, **task) -> str:
    ws, doc = sim_workspace(root, script, **task)
    manifest = build_bundle(parse_task_spec(doc), ws, ctl.store)
    return ctl.submit(doc, manifest.bundle_id)


def two_rank_script() -> list[dict]:
    return [
        {"rank": 0, "at": 2, "kind": "log", "text": "r0 first"},
        {"rank": 1, "at": 1, "kind": "log", "text": "r1 first"},
        {"rank": 1, "at": 2, "kind": "log", "text": "r1 tie"},
        {"rank": 0, "at": 4, "kind": "log", "text": "r0 second"},
        {"rank": 0, "at": 3, "kind": "write", "path": "out/a.txt", "data": "zero"},
        {"rank": 1, "at": 3, "kind": "write", "path": "out/a.txt", "data": "one"},
        {"rank": 0, "at": 5, "kind": "exit", "code": 0},
        {"rank": 1, "at": 5, "kind": "exit", "code": 0},
    ]


class LiveCluster:
    """A ticking controller behind a TCP server, plus a tcloud config pointing at it."""

    def __init__(self, tmp: Path, period: float = 0.02, **kw):
        from tacc.controld import ControllerServer

        self.ctl = make_controller(tmp, **kw)
        self.server = ControllerServer(self.ctl)
        self.server.start_background()
        self.ctl.start(period)
        self.endpoint = f"127.0.0.1:{self.server.port}"
        self.config = tmp / "tcloud.json"
        self.config.write_text(json.dumps(
            {"clusters": [{"name": "test", "endpoint": self.endpoint, "flags": {}}],
             "current": "test"}, indent=2, sort_keys=True) + "\n")

    def wait_for(self, job_id: str, states: set[str], timeout: float = 30.0) -> str:
        import time

        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            state = self.ctl.job(job_id).state
            if state in states:
                return state
            time.sleep(0.01)
        raise TimeoutError(f"job {job_id} stuck in {self.ctl.job(job_id).state}")

    def close(self) -> None:
        self.ctl.stop()
        self.server.shutdown()
        self.server.server_close()
        self.ctl.close()
