"""Compile a task workspace into a content-addressed bundle.

Files are addressed by the SHA-256 of their bytes; files larger than
``CHUNK_SIZE`` are split into fixed-size chunks so a large unchanged file is
never re-sent.  The manifest lists every entry with its chunk digests and is
itself addressed by the digest of its canonical text (the ``bundle_id``).
"""
from __future__ import annotations

import json
import os
import posixpath
import stat
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from . import canonical
from .cas import ObjectStore, digest_hex
from .errors import BundleIOError, MissingObject, SchemaInvalid
from .schema import TaskSpec, spec_hash_hex

CHUNK_SIZE = 4 * 1024 * 1024
MODES = ("file", "exec", "dir")


@dataclass(frozen=True)
class Entry:
    path: str
    mode: str
    size: int
    chunks: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"path": self.path, "mode": self.mode, "size": self.size,
                "chunks": list(self.chunks)}


@dataclass(frozen=True)
class BundleManifest:
    spec_hash: str
    entrypoint: str
    entries: tuple[Entry, ...]
    chunk_size: int = CHUNK_SIZE
    bundle_id: str = field(default="", compare=False)

    def body(self) -> dict:
        return {
            "chunk_size": self.chunk_size,
            "entries": [e.to_dict() for e in self.entries],
            "entrypoint": self.entrypoint,
            "spec_hash": self.spec_hash,
        }

    def text(self) -> str:
        return canonical.dumps(self.body()) + "\n"

    def chunk_sizes(self, entry: Entry) -> list[int]:
        return [min(self.chunk_size, entry.size - i * self.chunk_size)
                for i in range(len(entry.chunks))]

    def objects(self) -> Iterator[tuple[str, int]]:
        """Yield ``(digest, size)`` for every chunk, in entry order, with repeats."""
        for entry in self.entries:
            yield from zip(entry.chunks, self.chunk_sizes(entry))

    @property
    def total_bytes(self) -> int:
        return sum(e.size for e in self.entries)

    @classmethod
    def from_text(cls, text: str) -> BundleManifest:
        try:
            doc = json.loads(text)
            entries = tuple(
                Entry(e["path"], e["mode"], int(e["size"]), tuple(e["chunks"]))
                for e in doc["entries"])
            manifest = cls(doc["spec_hash"], doc["entrypoint"], entries,
                           int(doc["chunk_size"]))
        except (ValueError, KeyError, TypeError) as exc:
            raise SchemaInvalid(f"malformed manifest: {exc}", field="manifest") from None
        check_manifest(manifest)
        return _with_id(manifest)


def _with_id(manifest: BundleManifest) -> BundleManifest:
    bundle_id = digest_hex(manifest.text().encode("utf-8"))
    return BundleManifest(manifest.spec_hash, manifest.entrypoint, manifest.entries,
                          manifest.chunk_size, bundle_id)


def check_manifest(manifest: BundleManifest) -> None:
    """Raise SchemaInvalid unless every manifest invariant holds."""
    seen = set()
    if manifest.chunk_size <= 0:
        raise SchemaInvalid("chunk_size must be positive", field="manifest.chunk_size")
    for entry in manifest.entries:
        where = f"manifest.entries[{entry.path}]"
        p = entry.path
        if (p in seen or p.startswith("/") or posixpath.normpath(p) != p
                or p == ".." or p.startswith("../")):
            raise SchemaInvalid(f"bad or duplicate path {p!r}", field=where)
        seen.add(p)
        if entry.mode not in MODES:
            raise SchemaInvalid(f"bad mode {entry.mode!r}", field=where)
        if entry.mode == "dir":
            if entry.size or entry.chunks:
                raise SchemaInvalid("dir entries carry no content", field=where)
            continue
        expected_chunks = -(-entry.size // manifest.chunk_size)
        if entry.size < 0 or len(entry.chunks) != expected_chunks:
            raise SchemaInvalid("chunk count does not match size", field=where)


# -- build -----------------------------------------------------------------

def _rel(root: Path, path: Path) -> str:
    rel = path.relative_to(root).as_posix()
    return rel or "."


def _scan(root: Path, start: Path) -> Iterator[tuple[Path, str]]:
    """Yield ``(path, kind)`` for ``start`` and everything below it."""
    st = os.lstat(start)
    if stat.S_ISLNK(st.st_mode):
        raise SchemaInvalid(f"symlinks are not allowed in bundles: {_rel(root, start)}",
                            field=_rel(root, start))
    if stat.S_ISDIR(st.st_mode):
        yield start, "dir"
        try:
            children = sorted(os.listdir(start))
        except OSError as exc:
            raise BundleIOError(f"cannot list {start}: {exc}") from None
        for name in children:
            yield from _scan(root, start / name)
    elif stat.S_ISREG(st.st_mode):
        yield start, ("exec" if st.st_mode & stat.S_IXUSR else "file")
    else:
        raise BundleIOError(f"unsupported file type: {_rel(root, start)}")


def _store_file(path: Path, store: ObjectStore, chunk_size: int) -> tuple[int, tuple[str, ...]]:
    chunks = []
    size = 0
    try:
        with open(path, "rb") as fh:
            while True:
                block = fh.read(chunk_size)
                if not block:
                    break
                size += len(block)
                chunks.append(store.put(block))
    except OSError as exc:
        raise BundleIOError(f"cannot read {path}: {exc}") from None
    return size, tuple(chunks)


def bundle_roots(spec: TaskSpec) -> list[str]:
    """Workspace-relative paths a bundle must contain (URIs are left remote)."""
    roots = [spec.code_root]
    roots += [d for d in spec.datasets if "://" not in d]
    return roots


def build_bundle(spec: TaskSpec, workspace_root: str | os.PathLike, store: ObjectStore,
                 chunk_size: int = CHUNK_SIZE) -> BundleManifest:
    root = Path(workspace_root).resolve()
    entries: dict[str, Entry] = {}
    for rel in bundle_roots(spec):
        start = root / rel
        try:
            resolved = start.resolve()
        except OSError as exc:
            raise BundleIOError(f"cannot resolve {rel}: {exc}") from None
        if resolved != root and root not in resolved.parents:
            raise SchemaInvalid(f"path escapes workspace: {rel}", field=rel)
        if not os.path.lexists(start):
            raise BundleIOError(f"path does not exist: {rel}")
        for path, kind in _scan(root, start):
            key = _rel(root, path)
            if key in entries:
                continue
            if kind == "dir":
                entries[key] = Entry(key, "dir", 0, ())
            else:
                size, chunks = _store_file(path, store, chunk_size)
                entries[key] = Entry(key, kind, size, chunks)
    manifest = _with_id(BundleManifest(
        spec_hash=spec_hash_hex(spec),
        entrypoint=spec.entrypoint,
        entries=tuple(entries[k] for k in sorted(entries)),
        chunk_size=chunk_size,
    ))
    store.put_manifest(manifest.text(), manifest.bundle_id)
    return manifest


def load_manifest(store: ObjectStore, bundle_id: str) -> BundleManifest:
    manifest = BundleManifest.from_text(store.get_manifest_text(bundle_id))
    if manifest.bundle_id != bundle_id:
        raise BundleIOError(f"manifest {bundle_id} is corrupt")
    return manifest


# -- delta upload ----------------------------------------------------------

@dataclass(frozen=True)
class UploadPlan:
    missing_objects: tuple[tuple[str, int], ...]
    manifest_required: bool
    total_bytes: int


def plan_upload(manifest: BundleManifest, remote_index: Iterable[str]) -> UploadPlan:
    have = set(remote_index)
    missing = []
    queued = set()
    for digest, size in manifest.objects():
        if digest in have or digest in queued:
            continue
        queued.add(digest)
        missing.append((digest, size))
    return UploadPlan(tuple(missing), manifest.bundle_id not in have,
                      sum(size for _, size in missing))


# -- materialize -----------------------------------------------------------

def materialize(manifest: BundleManifest, store: ObjectStore,
                target: str | os.PathLike) -> Path:
    target = Path(target)
    for digest, _ in manifest.objects():
        if not store.has(digest):
            raise MissingObject(digest)
    try:
        target.mkdir(parents=True, exist_ok=True)
        if any(target.iterdir()):
            raise BundleIOError(f"target is not empty: {target}")
        base = target.resolve()
        for entry in manifest.entries:
            dest = (base / entry.path) if entry.path != "." else base
            if entry.mode == "dir":
                dest.mkdir(parents=True, exist_ok=True)
                continue
            dest.parent.mkdir(parents=True, exist_ok=True)
            with open(dest, "wb") as fh:
                for digest in entry.chunks:
                    fh.write(store.get(digest))
            os.chmod(dest, 0o755 if entry.mode == "exec" else 0o644)
    except OSError as exc:
        raise BundleIOError(f"cannot materialize into {target}: {exc}") from None
    return target


# -- garbage collection ----------------------------------------------------

def reachable(live: Iterable[BundleManifest]) -> tuple[set[str], set[str]]:
    objects: set[str] = set()
    manifests: set[str] = set()
    for manifest in live:
        manifests.add(manifest.bundle_id)
        objects.update(d for d, _ in manifest.objects())
    return objects, manifests


def gc(store: ObjectStore, live: Iterable[BundleManifest]) -> int:
    """Delete every object and manifest not reachable from ``live``."""
    keep_objects, keep_manifests = reachable(live)
    reclaimed = 0
    for digest in list(store.iter_objects()):
        if digest not in keep_objects:
            reclaimed += store.delete(digest)
    for bundle_id in list(store.iter_manifests()):
        if bundle_id not in keep_manifests:
            reclaimed += store.delete_manifest(bundle_id)
    return reclaimed
