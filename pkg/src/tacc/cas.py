"""On-disk content-addressed object store.

Layout::

    <root>/objects/<first 2 hex>/<remaining 62 hex>
    <root>/manifests/<64 hex>.json

Writes go to a temp file in the destination directory and are renamed into
place, so readers never see a partial object and a second writer of the
same digest is harmless.
"""
from __future__ import annotations

import hashlib
import os
import tempfile
from pathlib import Path
from typing import Iterator

from .errors import BundleIOError, MissingObject

HEX_LEN = 64


def digest_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _check_hex(digest: str) -> str:
    if len(digest) != HEX_LEN or any(c not in "0123456789abcdef" for c in digest):
        raise ValueError(f"not a sha256 hex digest: {digest!r}")
    return digest


class ObjectStore:
    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self.objects_dir = self.root / "objects"
        self.manifests_dir = self.root / "manifests"
        self.objects_dir.mkdir(parents=True, exist_ok=True)
        self.manifests_dir.mkdir(parents=True, exist_ok=True)

    # paths
    def object_path(self, digest: str) -> Path:
        _check_hex(digest)
        return self.objects_dir / digest[:2] / digest[2:]

    def manifest_path(self, bundle_id: str) -> Path:
        _check_hex(bundle_id)
        return self.manifests_dir / f"{bundle_id}.json"

    def _atomic_write(self, path: Path, data: bytes) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            try:
                os.unlink(tmp)
            except FileNotFoundError:
                pass
            raise

    # objects
    def put(self, data: bytes, digest: str | None = None) -> str:
        actual = digest_hex(data)
        if digest is not None and digest != actual:
            raise BundleIOError(f"digest mismatch: declared {digest}, content {actual}")
        path = self.object_path(actual)
        if not path.exists():
            self._atomic_write(path, data)
        return actual

    def has(self, digest: str) -> bool:
        try:
            return self.object_path(digest).exists()
        except ValueError:
            return False

    def get(self, digest: str) -> bytes:
        try:
            return self.object_path(digest).read_bytes()
        except FileNotFoundError:
            raise MissingObject(digest) from None

    def size(self, digest: str) -> int:
        try:
            return self.object_path(digest).stat().st_size
        except FileNotFoundError:
            raise MissingObject(digest) from None

    def iter_objects(self) -> Iterator[str]:
        for sub in sorted(self.objects_dir.iterdir()):
            if not sub.is_dir():
                continue
            for f in sorted(sub.iterdir()):
                if not f.name.startswith(".tmp-"):
                    yield sub.name + f.name

    def delete(self, digest: str) -> int:
        path = self.object_path(digest)
        size = path.stat().st_size
        path.unlink()
        return size

    # manifests
    def put_manifest(self, text: str, bundle_id: str | None = None) -> str:
        data = text.encode("utf-8")
        actual = digest_hex(data)
        if bundle_id is not None and bundle_id != actual:
            raise BundleIOError(f"manifest digest mismatch: {bundle_id} != {actual}")
        path = self.manifest_path(actual)
        if not path.exists():
            self._atomic_write(path, data)
        return actual

    def has_manifest(self, bundle_id: str) -> bool:
        try:
            return self.manifest_path(bundle_id).exists()
        except ValueError:
            return False

    def get_manifest_text(self, bundle_id: str) -> str:
        try:
            return self.manifest_path(bundle_id).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise MissingObject(bundle_id) from None

    def iter_manifests(self) -> Iterator[str]:
        for f in sorted(self.manifests_dir.glob("*.json")):
            yield f.stem

    def delete_manifest(self, bundle_id: str) -> int:
        path = self.manifest_path(bundle_id)
        size = path.stat().st_size
        path.unlink()
        return size

    def index(self) -> set[str]:
        """Every digest the store holds: objects and manifests alike."""
        return set(self.iter_objects()) | set(self.iter_manifests())

    def payload_bytes(self) -> int:
        total = sum(self.object_path(d).stat().st_size for d in self.iter_objects())
        total += sum(self.manifest_path(m).stat().st_size for m in self.iter_manifests())
        return total
