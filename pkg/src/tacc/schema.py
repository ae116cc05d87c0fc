"""Task descriptions: parsing, validation against a cluster, canonical identity.

A task file is strict JSON.  Unknown keys, duplicate keys, and type
mismatches are rejected with the dotted path of the offending field.
Omitted optional fields get exactly one default each (see ``DEFAULTS``).
"""
from __future__ import annotations

import hashlib
import json
import posixpath
import re
from dataclasses import dataclass, field
from typing import Any, Iterable

from . import canonical
from .errors import SchemaInvalid

QOS_CLASSES = ("high", "normal", "preemptible")
MAX_NAME_LEN = 128
LONG_WALLTIME_S = 7 * 24 * 3600

_ENV_KEY = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_URI = re.compile(r"[A-Za-z][A-Za-z0-9+.-]*://")

TOP_LEVEL_KEYS = frozenset({
    "name", "user", "resources", "qos", "code_root", "entrypoint", "datasets",
    "dependencies", "env", "runtime_preference", "walltime_estimate_s", "nodes",
})
RESOURCE_KEYS = frozenset({"cpus", "gpus", "mem_mib"})

DEFAULTS: dict[str, Any] = {
    "qos": "normal",
    "code_root": ".",
    "datasets": [],
    "dependencies": [],
    "env": {},
    "runtime_preference": None,
    "walltime_estimate_s": 3600,
    "nodes": 1,
    "resources.gpus": 0,
}


@dataclass(frozen=True)
class ResourceReq:
    cpus: int = 1
    gpus: int = 0
    mem_mib: int = 1

    def __add__(self, other: ResourceReq) -> ResourceReq:
        return ResourceReq(self.cpus + other.cpus, self.gpus + other.gpus,
                           self.mem_mib + other.mem_mib)

    def __sub__(self, other: ResourceReq) -> ResourceReq:
        return ResourceReq(self.cpus - other.cpus, self.gpus - other.gpus,
                           self.mem_mib - other.mem_mib)

    def scaled(self, k: int) -> ResourceReq:
        return ResourceReq(self.cpus * k, self.gpus * k, self.mem_mib * k)

    def fits_in(self, capacity: ResourceReq) -> bool:
        return (self.cpus <= capacity.cpus and self.gpus <= capacity.gpus
                and self.mem_mib <= capacity.mem_mib)

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.cpus, self.gpus, self.mem_mib)

    def to_dict(self) -> dict:
        return {"cpus": self.cpus, "gpus": self.gpus, "mem_mib": self.mem_mib}

    @classmethod
    def from_dict(cls, d: dict) -> ResourceReq:
        return cls(int(d["cpus"]), int(d.get("gpus", 0)), int(d["mem_mib"]))


@dataclass(frozen=True)
class TaskSpec:
    name: str
    user: str
    resources: ResourceReq
    entrypoint: str
    qos: str = "normal"
    code_root: str = "."
    datasets: tuple[str, ...] = ()
    dependencies: tuple[str, ...] = ()
    env: tuple[tuple[str, str], ...] = ()
    runtime_preference: tuple[str, ...] | None = None
    walltime_estimate_s: int = 3600
    nodes: int = 1

    @property
    def env_dict(self) -> dict[str, str]:
        return dict(self.env)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "user": self.user,
            "resources": self.resources.to_dict(),
            "qos": self.qos,
            "code_root": self.code_root,
            "entrypoint": self.entrypoint,
            "datasets": list(self.datasets),
            "dependencies": list(self.dependencies),
            "env": dict(self.env),
            "runtime_preference": (None if self.runtime_preference is None
                                   else list(self.runtime_preference)),
            "walltime_estimate_s": self.walltime_estimate_s,
            "nodes": self.nodes,
        }


@dataclass(frozen=True)
class Issue:
    severity: str  # "error" | "warning"
    field_path: str
    message: str
    code: str = ""


@dataclass
class ValidationReport:
    issues: list[Issue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not any(i.severity == "error" for i in self.issues)

    @property
    def errors(self) -> list[Issue]:
        return [i for i in self.issues if i.severity == "error"]


@dataclass(frozen=True)
class ClusterLimits:
    """Per-node capacities of a cluster, used to reject unrunnable tasks."""

    node_capacities: tuple[ResourceReq, ...]

    @classmethod
    def from_capacities(cls, caps: Iterable[ResourceReq]) -> ClusterLimits:
        return cls(tuple(caps))

    @property
    def largest(self) -> ResourceReq:
        caps = self.node_capacities
        return ResourceReq(max((c.cpus for c in caps), default=0),
                           max((c.gpus for c in caps), default=0),
                           max((c.mem_mib for c in caps), default=0))

    @property
    def total(self) -> ResourceReq:
        total = ResourceReq(0, 0, 0)
        for c in self.node_capacities:
            total = total + c
        return total


# -- parsing ---------------------------------------------------------------

def _reject_duplicates(pairs):
    out = {}
    for key, value in pairs:
        if key in out:
            raise SchemaInvalid(f"duplicate key {key!r}", field=key)
        out[key] = value
    return out


def _reject_constant(name):
    raise SchemaInvalid(f"non-finite number {name} is not allowed")


def _int(value: Any, path: str, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaInvalid(f"expected integer, got {type(value).__name__}", field=path)
    if value < minimum:
        raise SchemaInvalid(f"must be >= {minimum}, got {value}", field=path)
    return value


def _str(value: Any, path: str) -> str:
    if not isinstance(value, str):
        raise SchemaInvalid(f"expected string, got {type(value).__name__}", field=path)
    return value


def _str_list(value: Any, path: str) -> tuple[str, ...]:
    if not isinstance(value, list):
        raise SchemaInvalid(f"expected list, got {type(value).__name__}", field=path)
    return tuple(_str(v, f"{path}[{i}]") for i, v in enumerate(value))


def _relative_path(value: str, path: str) -> str:
    if not value or value.startswith("/") or "\\" in value:
        raise SchemaInvalid(f"must be a relative POSIX path, got {value!r}", field=path)
    norm = posixpath.normpath(value)
    if norm == ".." or norm.startswith("../"):
        raise SchemaInvalid(f"path escapes the workspace: {value!r}", field=path)
    return norm


def _resources(value: Any) -> ResourceReq:
    if not isinstance(value, dict):
        raise SchemaInvalid("expected object", field="resources")
    unknown = set(value) - RESOURCE_KEYS
    if unknown:
        key = sorted(unknown)[0]
        raise SchemaInvalid("unknown field", field=f"resources.{key}")
    for key in ("cpus", "mem_mib"):
        if key not in value:
            raise SchemaInvalid("required field missing", field=f"resources.{key}")
    return ResourceReq(
        cpus=_int(value["cpus"], "resources.cpus", 1),
        gpus=_int(value.get("gpus", DEFAULTS["resources.gpus"]), "resources.gpus", 0),
        mem_mib=_int(value["mem_mib"], "resources.mem_mib", 1),
    )


def spec_from_dict(doc: Any) -> TaskSpec:
    """Build a TaskSpec from already-decoded JSON, applying defaults."""
    if not isinstance(doc, dict):
        raise SchemaInvalid("task description must be a JSON object", field="")
    unknown = set(doc) - TOP_LEVEL_KEYS
    if unknown:
        raise SchemaInvalid("unknown field", field=sorted(unknown)[0])
    for key in ("name", "user", "entrypoint", "resources"):
        if key not in doc:
            raise SchemaInvalid("required field missing", field=key)

    name = _str(doc["name"], "name")
    if not name or len(name) > MAX_NAME_LEN:
        raise SchemaInvalid(f"must be 1..{MAX_NAME_LEN} characters", field="name")
    user = _str(doc["user"], "user")
    if not user:
        raise SchemaInvalid("must be non-empty", field="user")
    entrypoint = _str(doc["entrypoint"], "entrypoint")
    if not entrypoint.strip():
        raise SchemaInvalid("must be non-empty", field="entrypoint")

    qos = _str(doc.get("qos", DEFAULTS["qos"]), "qos")
    if qos not in QOS_CLASSES:
        raise SchemaInvalid(f"must be one of {', '.join(QOS_CLASSES)}", field="qos")

    code_root = _relative_path(_str(doc.get("code_root", DEFAULTS["code_root"]),
                                    "code_root"), "code_root")
    datasets = []
    for i, ds in enumerate(_str_list(doc.get("datasets", DEFAULTS["datasets"]), "datasets")):
        datasets.append(ds if _URI.match(ds) else _relative_path(ds, f"datasets[{i}]"))
    dependencies = _str_list(doc.get("dependencies", DEFAULTS["dependencies"]), "dependencies")

    env_raw = doc.get("env", DEFAULTS["env"])
    if not isinstance(env_raw, dict):
        raise SchemaInvalid("expected object", field="env")
    env = []
    for key in sorted(env_raw):
        if not _ENV_KEY.match(key):
            raise SchemaInvalid("invalid environment variable name", field=f"env.{key}")
        env.append((key, _str(env_raw[key], f"env.{key}")))

    pref_raw = doc.get("runtime_preference", DEFAULTS["runtime_preference"])
    pref = None
    if pref_raw is not None:
        pref = _str_list(pref_raw, "runtime_preference")
        if len(set(pref)) != len(pref):
            raise SchemaInvalid("duplicate backend names", field="runtime_preference")

    return TaskSpec(
        name=name,
        user=user,
        resources=_resources(doc["resources"]),
        entrypoint=entrypoint,
        qos=qos,
        code_root=code_root,
        datasets=tuple(datasets),
        dependencies=dependencies,
        env=tuple(env),
        runtime_preference=pref,
        walltime_estimate_s=_int(doc.get("walltime_estimate_s",
                                         DEFAULTS["walltime_estimate_s"]),
                                 "walltime_estimate_s", 1),
        nodes=_int(doc.get("nodes", DEFAULTS["nodes"]), "nodes", 1),
    )


def parse_task_spec(document: str | bytes) -> TaskSpec:
    """Parse a ``task.json`` document into a fully populated TaskSpec."""
    if isinstance(document, bytes):
        try:
            document = document.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SchemaInvalid(f"not UTF-8: {exc}", field="") from None
    try:
        doc = json.loads(document, object_pairs_hook=_reject_duplicates,
                         parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise SchemaInvalid(f"malformed JSON: {exc}", field="") from None
    return spec_from_dict(doc)


# -- validation ------------------------------------------------------------

def validate(spec: TaskSpec, limits: ClusterLimits) -> ValidationReport:
    report = ValidationReport()
    req = spec.resources
    largest = limits.largest
    total = limits.total
    per_node_ok = True
    for key in ("cpus", "gpus", "mem_mib"):
        want = getattr(req, key)
        if want > getattr(largest, key):
            per_node_ok = False
            report.issues.append(Issue(
                "error", f"resources.{key}",
                f"UNSATISFIABLE: {want} requested per node, largest node has "
                f"{getattr(largest, key)}", "UNSATISFIABLE"))
        elif want * spec.nodes > getattr(total, key):
            report.issues.append(Issue(
                "error", f"resources.{key}",
                f"UNSATISFIABLE: {spec.nodes} x {want} = {want * spec.nodes} exceeds "
                f"cluster total {getattr(total, key)}", "UNSATISFIABLE"))
    if per_node_ok and report.ok:
        hosts = sum(1 for cap in limits.node_capacities if req.fits_in(cap))
        if hosts < spec.nodes:
            report.issues.append(Issue(
                "error", "nodes",
                f"UNSATISFIABLE: {spec.nodes} nodes requested, only {hosts} can host "
                f"the per-node request", "UNSATISFIABLE"))
    if spec.walltime_estimate_s > LONG_WALLTIME_S:
        report.issues.append(Issue(
            "warning", "walltime_estimate_s",
            f"walltime estimate {spec.walltime_estimate_s}s exceeds 7 days"))
    return report


# -- canonical identity ----------------------------------------------------

def canonical_text(spec: TaskSpec) -> str:
    return canonical.dumps(spec.to_dict()) + "\n"


def canonicalize(spec: TaskSpec) -> tuple[str, bytes]:
    """Return ``(canonical_text, sha256 digest)`` for ``spec``.

    Two documents that differ only in key order, whitespace, or omitted
    defaults canonicalize to the same text.
    """
    text = canonical_text(spec)
    return text, hashlib.sha256(text.encode("utf-8")).digest()


def spec_hash_hex(spec: TaskSpec) -> str:
    return canonicalize(spec)[1].hex()
