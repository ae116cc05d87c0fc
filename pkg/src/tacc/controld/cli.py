"""``tacc-controld``: run the controller service, or relay stdio to it."""
from __future__ import annotations

import argparse
import logging
import signal
import sys
import threading
from pathlib import Path

from ..cas import ObjectStore
from ..exec import (BackendDescriptor, Capabilities, LocalProcessBackend, Registry,
                    SimulatedBackend)
from ..schema import ResourceReq
from ..sched import Policy, load_policy
from .controller import Controller, NodeConfig, VirtualClock, WallClock, parse_nodes
from .server import ControllerServer

DEFAULT_NODES = "node1:16:4:65536,node2:16:4:65536"


def build_registry(text: str, nodes: list[NodeConfig], work_root: Path) -> Registry:
    """``name:kind`` entries, comma separated, in rank order."""
    largest = ResourceReq(max(n.capacity.cpus for n in nodes),
                          max(n.capacity.gpus for n in nodes),
                          max(n.capacity.mem_mib for n in nodes))
    caps = Capabilities(largest, max_nodes=len(nodes))
    registry = Registry()
    for item in filter(None, (s.strip() for s in text.split(","))):
        name, _, kind = item.partition(":")
        kind = kind or "simulated"
        if kind == "simulated":
            backend = SimulatedBackend(name)
        elif kind == "local_process":
            backend = LocalProcessBackend(name, work_root / name)
        else:
            raise SystemExit(f"unknown backend kind {kind!r}")
        registry.register(BackendDescriptor(name, kind, caps), backend)
    return registry


def serve(args: argparse.Namespace) -> int:
    state_dir = Path(args.state_dir)
    state_dir.mkdir(parents=True, exist_ok=True)
    nodes = parse_nodes(args.nodes)
    policy = load_policy(args.policy) if args.policy else Policy()
    registry = build_registry(args.backends, nodes, state_dir / "work")
    clock = VirtualClock() if args.virtual else WallClock()
    kwargs = dict(nodes=nodes, registry=registry, store=ObjectStore(state_dir / "cas"),
                  policy=policy, clock=clock, fsync=args.fsync)
    if (state_dir / "events.log").exists():
        ctl = Controller.open(state_dir, **kwargs)
        if ctl.recovery_error is not None:
            logging.warning("recovered up to the last valid record: %s", ctl.recovery_error)
    else:
        ctl = Controller(state_dir=state_dir, **kwargs)
    server = ControllerServer(ctl, args.host, args.port)
    ctl.start(args.period)
    print(f"tacc-controld listening on {args.host}:{server.port}", flush=True)
    if args.port_file:
        Path(args.port_file).write_text(str(server.port))

    done = threading.Event()

    def on_signal(signum, frame):
        done.set()

    signal.signal(signal.SIGTERM, on_signal)
    signal.signal(signal.SIGINT, on_signal)
    if args.policy:
        def reload(signum, frame):
            ctl.reload_policy(load_policy(args.policy))
        signal.signal(signal.SIGHUP, reload)
    server.start_background()
    done.wait()
    server.shutdown()
    server.server_close()
    ctl.close()
    return 0


def relay(args: argparse.Namespace) -> int:
    """Copy stdin to a local controller port and the replies to stdout."""
    import socket

    try:
        sock = socket.create_connection((args.host, args.port))
    except OSError as exc:
        print(f"relay: cannot reach controller: {exc}", file=sys.stderr)
        return 3
    stdin, stdout = sys.stdin.buffer, sys.stdout.buffer

    def upstream():
        try:
            while True:
                chunk = stdin.read1(65536) if hasattr(stdin, "read1") else stdin.read(65536)
                if not chunk:
                    break
                sock.sendall(chunk)
        finally:
            try:
                sock.shutdown(socket.SHUT_WR)
            except OSError:
                pass

    threading.Thread(target=upstream, daemon=True).start()
    while True:
        chunk = sock.recv(65536)
        if not chunk:
            break
        stdout.write(chunk)
        stdout.flush()
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="tacc-controld", description=__doc__)
    sub = parser.add_subparsers(dest="cmd")

    p = sub.add_parser("serve", help="run the controller")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7621)
    p.add_argument("--port-file", help="write the bound port here (useful with --port 0)")
    p.add_argument("--state-dir", default="tacc-state")
    p.add_argument("--nodes", default=DEFAULT_NODES, help="name:cpus:gpus:mem_mib,...")
    p.add_argument("--backends", default="sim0:simulated", help="name:kind,... in rank order")
    p.add_argument("--policy", help="policy.json")
    p.add_argument("--period", type=float, default=1.0, help="scheduler period in seconds")
    p.add_argument("--virtual", action="store_true",
                   help="virtual clock: one virtual second per period")
    p.add_argument("--fsync", action="store_true")
    p.set_defaults(func=serve)

    r = sub.add_parser("relay", help="bridge stdin/stdout to a local controller (for ssh)")
    r.add_argument("--host", default="127.0.0.1")
    r.add_argument("--port", type=int, default=7621)
    r.set_defaults(func=relay)

    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_help()
        return 2
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
