"""Backend registry, ranked backend selection, and fail-safe switching.

Selection walks the layer factors top-down; an earlier layer's choice is
never reordered by a later one:

1. schema     -- the task's own ``runtime_preference``
2. compiler   -- static characteristics (language, bundle size)
3. scheduling -- runtime characteristics (expected duration)
4. execution  -- every remaining healthy, capable backend in registry order
"""
from __future__ import annotations

import shlex
import threading
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from ..errors import BackendUnavailable
from ..schema import ResourceReq, TaskSpec
from .base import Backend

LAYERS = ("schema", "compiler", "scheduling", "execution")


@dataclass(frozen=True)
class Capabilities:
    max_resources: ResourceReq
    max_nodes: int = 64
    features: frozenset[str] = frozenset()


@dataclass
class BackendDescriptor:
    name: str
    kind: str  # local_process | simulated
    capabilities: Capabilities
    health: str = "up"

    def supports(self, spec: TaskSpec) -> bool:
        cap = self.capabilities
        return spec.resources.fits_in(cap.max_resources) and spec.nodes <= cap.max_nodes


@dataclass(frozen=True)
class FactorRecord:
    layer: str
    factor: str
    effect: str

    def to_dict(self) -> dict:
        return {"layer": self.layer, "factor": self.factor, "effect": self.effect}

    @classmethod
    def from_dict(cls, d: dict) -> FactorRecord:
        return cls(d["layer"], d["factor"], d["effect"])


@dataclass(frozen=True)
class SelectionTrace:
    backends: tuple[str, ...]
    factors: tuple[FactorRecord, ...] = ()

    def with_factor(self, record: FactorRecord) -> SelectionTrace:
        return SelectionTrace(self.backends, self.factors + (record,))

    def to_dict(self) -> dict:
        return {"backends": list(self.backends),
                "factors": [f.to_dict() for f in self.factors]}

    @classmethod
    def from_dict(cls, d: dict) -> SelectionTrace:
        return cls(tuple(d["backends"]), tuple(FactorRecord.from_dict(f) for f in d["factors"]))


@dataclass(frozen=True)
class StaticChars:
    language: str = "unknown"
    bundle_size_bytes: int = 0


@dataclass(frozen=True)
class RuntimeChars:
    expected_duration_s: float = 0.0


@dataclass(frozen=True)
class SelectionRules:
    large_bundle_bytes: int | None = 256 * 1024 * 1024
    large_bundle_kind: str = "local_process"
    short_duration_s: float | None = None
    short_duration_kind: str = "simulated"
    language_kinds: dict[str, str] = field(default_factory=dict)


_LANG_BY_COMMAND = {
    "python": "python", "python3": "python", "torchrun": "python", "ipython": "python",
    "bash": "shell", "sh": "shell", "julia": "julia", "java": "java", "Rscript": "r",
    "tacc-sim": "simulated",
}


def guess_language(entrypoint: str) -> str:
    try:
        argv = shlex.split(entrypoint)
    except ValueError:
        return "unknown"
    for tok in argv:
        if "=" in tok and not tok.startswith("-"):
            continue  # leading VAR=value assignments
        cmd = tok.rsplit("/", 1)[-1]
        if cmd in _LANG_BY_COMMAND:
            return _LANG_BY_COMMAND[cmd]
        if cmd.endswith(".py"):
            return "python"
        if cmd.endswith(".sh"):
            return "shell"
        return "unknown"
    return "unknown"


class Registry:
    """Ordered backends with a serialized health table."""

    def __init__(self, entries: Iterable[tuple[BackendDescriptor, Backend]] = ()):
        self._lock = threading.Lock()
        self._descriptors: dict[str, BackendDescriptor] = {}
        self._backends: dict[str, Backend] = {}
        for desc, backend in entries:
            self.register(desc, backend)

    def register(self, desc: BackendDescriptor, backend: Backend) -> None:
        with self._lock:
            if desc.name in self._descriptors:
                raise ValueError(f"duplicate backend name {desc.name!r}")
            self._descriptors[desc.name] = desc
            self._backends[desc.name] = backend

    def __iter__(self) -> Iterator[BackendDescriptor]:
        return iter(list(self._descriptors.values()))

    def __len__(self) -> int:
        return len(self._descriptors)

    def __contains__(self, name: str) -> bool:
        return name in self._descriptors

    def names(self) -> list[str]:
        return list(self._descriptors)

    def descriptor(self, name: str) -> BackendDescriptor:
        return self._descriptors[name]

    def backend(self, name: str) -> Backend:
        return self._backends[name]

    def healthy(self, name: str) -> bool:
        desc = self._descriptors.get(name)
        return desc is not None and desc.health == "up"

    def set_health(self, name: str, health: str) -> None:
        if health not in ("up", "down"):
            raise ValueError(health)
        with self._lock:
            self._descriptors[name].health = health

    def health_table(self) -> dict[str, str]:
        with self._lock:
            return {n: d.health for n, d in self._descriptors.items()}


def select_backend(spec: TaskSpec, static: StaticChars, runtime: RuntimeChars,
                   registry: Registry, rules: SelectionRules = SelectionRules()) -> SelectionTrace:
    if not len(registry):
        raise BackendUnavailable("registry is empty")
    capable = [d for d in registry if d.health == "up" and d.supports(spec)]
    if not capable:
        raise BackendUnavailable("no healthy backend can host the requested resources")
    capable_names = [d.name for d in capable]
    ranked: list[str] = []
    factors: list[FactorRecord] = []

    def prefer_kind(kind: str) -> list[str]:
        added = [d.name for d in capable if d.kind == kind and d.name not in ranked]
        ranked.extend(added)
        return added

    if spec.runtime_preference:
        taken, skipped = [], []
        for name in spec.runtime_preference:
            if name in capable_names:
                if name not in ranked:
                    ranked.append(name)
                    taken.append(name)
            else:
                why = ("unknown" if name not in registry else
                       "down" if not registry.healthy(name) else "incapable")
                skipped.append(f"{name} ({why})")
        effect = f"ranked {', '.join(taken) or 'nothing'}"
        if skipped:
            effect += f"; skipped {', '.join(skipped)}"
        factors.append(FactorRecord("schema", "user-indicated preference", effect))

    if static.language in rules.language_kinds:
        kind = rules.language_kinds[static.language]
        added = prefer_kind(kind)
        factors.append(FactorRecord(
            "compiler", "static characteristic: language",
            f"{static.language} prefers {kind}: {', '.join(added) or 'no change'}"))
    if rules.large_bundle_bytes is not None and static.bundle_size_bytes > rules.large_bundle_bytes:
        added = prefer_kind(rules.large_bundle_kind)
        factors.append(FactorRecord(
            "compiler", "static characteristic: task size",
            f"{static.bundle_size_bytes} bytes > {rules.large_bundle_bytes} prefers "
            f"{rules.large_bundle_kind}: {', '.join(added) or 'no change'}"))
    if (rules.short_duration_s is not None
            and runtime.expected_duration_s < rules.short_duration_s):
        added = prefer_kind(rules.short_duration_kind)
        factors.append(FactorRecord(
            "scheduling", "runtime characteristic: expected duration",
            f"{runtime.expected_duration_s}s < {rules.short_duration_s}s prefers "
            f"{rules.short_duration_kind}: {', '.join(added) or 'no change'}"))

    rest = [n for n in capable_names if n not in ranked]
    if not factors:
        factors.append(FactorRecord("execution", "default registry order",
                                    ", ".join(capable_names)))
    ranked.extend(rest)
    factors.append(FactorRecord("execution", "fail-safe switching",
                                f"fallback order {' > '.join(ranked)}"))
    return SelectionTrace(tuple(ranked), tuple(factors))


def failover(failed_backend: str, trace: SelectionTrace, registry: Registry,
             attempted: Iterable[str] = ()) -> str | None:
    """Mark ``failed_backend`` down and return the next usable trace entry.

    Backends already attempted in this provisioning round are never retried.
    ``None`` means the list is exhausted.
    """
    if failed_backend in registry:
        registry.set_health(failed_backend, "down")
    tried = set(attempted) | {failed_backend}
    names = list(trace.backends)
    start = names.index(failed_backend) + 1 if failed_backend in names else 0
    for name in names[start:] + names[:start]:
        if name not in tried and registry.healthy(name):
            return name
    return None
