"""tcloud: submit, monitor and manage tasks on a remote controller.

Exit status: 0 success, 2 local or usage error, 3 connectivity problem,
4 error reported by the controller.
"""
from __future__ import annotations

import argparse
import io
import json
import sys
import tarfile
import tempfile
from dataclasses import dataclass
from pathlib import Path, PurePosixPath

from ..bundle import BundleManifest, build_bundle
from ..cas import ObjectStore
from ..errors import SchemaInvalid, TaccError
from ..schema import parse_task_spec
from .client import Client, ConnectError
from .config import ConfigError, load_config, use_cluster

EXIT_OK, EXIT_USAGE, EXIT_CONNECT, EXIT_SERVER = 0, 2, 3, 4
COLUMNS = ("JOB", "USER", "STATE", "AGE", "NODES", "BACKEND")


class CliExit(Exception):
    def __init__(self, code: int, message: str = ""):
        super().__init__(message)
        self.code = code
        self.message = message


@dataclass
class UploadStats:
    objects: int = 0
    object_bytes: int = 0
    manifest_bytes: int = 0

    @property
    def puts(self) -> int:
        return self.objects + (1 if self.manifest_bytes else 0)


def upload_bundle(client: Client, manifest: BundleManifest, store: ObjectStore) -> UploadStats:
    """Send only what the controller is missing, then the manifest if needed."""
    wanted = list(dict.fromkeys(d for d, _ in manifest.objects()))
    missing = set(client.cas_check(wanted + [manifest.bundle_id]))
    stats = UploadStats()
    for digest in wanted:
        if digest in missing:
            data = store.get(digest)
            client.cas_put(data, "object")
            stats.objects += 1
            stats.object_bytes += len(data)
    if manifest.bundle_id in missing:
        text = manifest.text().encode("utf-8")
        client.cas_put(text, "manifest")
        stats.manifest_bytes = len(text)
    return stats


def _connect(args) -> Client:
    try:
        cluster = load_config().get(args.cluster)
    except ConfigError as exc:
        raise CliExit(EXIT_CONNECT, f"config error: {exc}") from None
    return Client.connect(cluster)


def _emit_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _fmt_age(seconds: int) -> str:
    seconds = int(seconds)
    if seconds < 120:
        return f"{seconds}s"
    if seconds < 7200:
        return f"{seconds // 60}m"
    return f"{seconds // 3600}h"


def format_table(jobs: list[dict]) -> str:
    rows = [COLUMNS] + [(j["job_id"], j["user"], j["state"] + (f"({j['reason']})"
                         if j.get("reason") else ""), _fmt_age(j["age"]), str(j["nodes"]),
                         j.get("backend") or "-") for j in jobs]
    widths = [max(len(r[i]) for r in rows) for i in range(len(COLUMNS))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows)


# -- commands -------------------------------------------------------------------

def cmd_submit(args) -> int:
    task_file = Path(args.task_file)
    try:
        doc = task_file.read_text(encoding="utf-8")
    except OSError as exc:
        raise CliExit(EXIT_USAGE, f"cannot read {task_file}: {exc}") from None
    try:
        spec = parse_task_spec(doc)
    except SchemaInvalid as exc:
        # fail before any network traffic
        raise CliExit(EXIT_USAGE, f"invalid task file: {exc}") from None
    workspace = Path(args.workspace) if args.workspace else task_file.resolve().parent
    with tempfile.TemporaryDirectory(prefix="tcloud-") as tmp:
        store = ObjectStore(tmp)
        try:
            manifest = build_bundle(spec, workspace, store)
        except TaccError as exc:
            raise CliExit(EXIT_USAGE, str(exc)) from None
        with _connect(args) as client:
            stats = upload_bundle(client, manifest, store)
            job_id = client.submit(doc, manifest.bundle_id)
    if args.json:
        _emit_json({"job_id": job_id, "bundle_id": manifest.bundle_id,
                    "uploaded_objects": stats.objects, "uploaded_bytes": stats.object_bytes,
                    "manifest_bytes": stats.manifest_bytes})
    else:
        print(job_id)
        print(f"uploaded {stats.objects} object(s), {stats.object_bytes} bytes",
              file=sys.stderr)
    return EXIT_OK


def cmd_status(args) -> int:
    if not args.all and not args.job_id:
        raise CliExit(EXIT_USAGE, "give a job id or --all")
    with _connect(args) as client:
        if args.all:
            filt = {}
            if args.user:
                filt["user"] = args.user
            if args.state:
                filt["state"] = args.state
            jobs = client.list_jobs(filt)
            payload: dict | list = jobs
        else:
            payload = client.status(args.job_id)
            jobs = [payload]
    if args.json:
        _emit_json(payload)
        return EXIT_OK
    print(format_table(jobs))
    if not args.all and payload.get("exit_codes"):
        codes = " ".join(f"rank{r}={c}" for r, c in sorted(payload["exit_codes"].items(),
                                                            key=lambda kv: int(kv[0])))
        print(f"exit codes: {codes}")
    return EXIT_OK


def cmd_logs(args) -> int:
    last = args.since
    retried = False
    while True:
        try:
            with _connect(args) as client:
                for line in client.logs(args.job_id, args.follow, last):
                    if args.json:
                        print(json.dumps(line, sort_keys=True), flush=True)
                    else:
                        print(f"[{line['rank']}] {line['line']}", flush=True)
                    last = max(last, int(line["seq"]))
            return EXIT_OK
        except ConnectError:
            if not args.follow or retried:
                raise
            retried = True


def _safe_member(name: str) -> bool:
    p = PurePosixPath(name)
    return not p.is_absolute() and ".." not in p.parts


def cmd_get(args) -> int:
    dest = Path(args.dest)
    with _connect(args) as client:
        archive = client.fetch(args.job_id, args.glob)
    dest.mkdir(parents=True, exist_ok=True)
    count = 0
    with tarfile.open(fileobj=io.BytesIO(archive), mode="r") as tar:
        for member in tar.getmembers():
            if not member.isfile() or not _safe_member(member.name):
                continue
            target = dest.joinpath(*PurePosixPath(member.name).parts)
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(tar.extractfile(member).read())
            count += 1
            if not args.json:
                print(member.name)
    if args.json:
        _emit_json({"files": count})
    elif count == 0:
        print(f"no files matched {args.glob!r}", file=sys.stderr)
    return EXIT_OK


def cmd_kill(args) -> int:
    with _connect(args) as client:
        ack = client.kill(args.job_id)
    if args.json:
        _emit_json(ack)
    else:
        print(f"{ack['job_id']} {ack['state']}")
    return EXIT_OK


def cmd_cluster(args) -> int:
    try:
        if args.action == "use":
            if not args.name:
                raise CliExit(EXIT_USAGE, "cluster use needs a name")
            cfg = use_cluster(args.name)
            print(f"now using {cfg.current}")
            return EXIT_OK
        cfg = load_config()
    except ConfigError as exc:
        raise CliExit(EXIT_USAGE, str(exc)) from None
    if args.json:
        _emit_json(cfg.to_dict())
        return EXIT_OK
    for c in cfg.clusters:
        mark = "*" if c.name == cfg.current else " "
        print(f"{mark} {c.name}  {c.endpoint}")
    return EXIT_OK


# -- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--cluster", help="override the current cluster")
    common.add_argument("--json", action="store_true", help="print raw protocol payloads")

    parser = argparse.ArgumentParser(prog="tcloud", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("submit", parents=[common], help="build, upload and submit a task")
    p.add_argument("task_file")
    p.add_argument("--workspace", help="defaults to the task file's directory")
    p.set_defaults(func=cmd_submit)

    p = sub.add_parser("status", parents=[common], help="show one job or all jobs")
    p.add_argument("job_id", nargs="?")
    p.add_argument("--all", action="store_true")
    p.add_argument("--user")
    p.add_argument("--state")
    p.set_defaults(func=cmd_status)

    p = sub.add_parser("logs", parents=[common], help="print merged logs of all ranks")
    p.add_argument("job_id")
    p.add_argument("--follow", "-f", action="store_true")
    p.add_argument("--since", type=int, default=0, help="resume after this sequence number")
    p.set_defaults(func=cmd_logs)

    p = sub.add_parser("get", parents=[common], help="download files from every rank")
    p.add_argument("job_id")
    p.add_argument("glob")
    p.add_argument("dest")
    p.set_defaults(func=cmd_get)

    p = sub.add_parser("kill", parents=[common], help="stop a job on all its nodes")
    p.add_argument("job_id")
    p.set_defaults(func=cmd_kill)

    p = sub.add_parser("cluster", parents=[common], help="list or switch clusters")
    p.add_argument("action", choices=("list", "use"))
    p.add_argument("name", nargs="?")
    p.set_defaults(func=cmd_cluster)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except CliExit as exc:
        if exc.message:
            print(f"tcloud: {exc.message}", file=sys.stderr)
        return exc.code
    except ConnectError as exc:
        print(f"tcloud: {exc}", file=sys.stderr)
        return EXIT_CONNECT
    except TaccError as exc:
        print(f"tcloud: {exc}", file=sys.stderr)
        return EXIT_SERVER
    except ConfigError as exc:
        print(f"tcloud: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
