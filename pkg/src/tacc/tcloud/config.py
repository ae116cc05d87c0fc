"""Client configuration: named clusters and which one is current.

The file is pretty-printed JSON with sorted keys, so ``current`` always sits
on a line of its own and switching clusters touches only that line.
"""
from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

ENV_VAR = "TCLOUD_CONFIG"
DEFAULT_PATH = Path("~/.config/tcloud/config.json")
_CURRENT_LINE = re.compile(r'^(\s*"current"\s*:\s*)"(?:[^"\\]|\\.)*"(\s*,?\s*)$', re.M)


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class Cluster:
    name: str
    endpoint: str
    flags: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "endpoint": self.endpoint, "flags": dict(self.flags)}


@dataclass
class ClusterConfig:
    clusters: list[Cluster]
    current: str

    def __post_init__(self):
        names = [c.name for c in self.clusters]
        if len(set(names)) != len(names):
            raise ConfigError("cluster names must be unique")
        if self.current not in names:
            raise ConfigError(f"current cluster {self.current!r} is not configured")

    def get(self, name: str | None = None) -> Cluster:
        name = name or self.current
        for c in self.clusters:
            if c.name == name:
                return c
        raise ConfigError(f"unknown cluster {name!r}")

    def to_dict(self) -> dict:
        return {"clusters": [c.to_dict() for c in self.clusters], "current": self.current}

    def text(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> ClusterConfig:
        try:
            clusters = [Cluster(c["name"], c["endpoint"], dict(c.get("flags") or {}))
                        for c in d["clusters"]]
            return cls(clusters, d["current"])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed config: {exc}") from None


def default_config() -> ClusterConfig:
    return ClusterConfig([Cluster("local", "127.0.0.1:7621")], "local")


def config_path() -> Path:
    return Path(os.environ.get(ENV_VAR) or DEFAULT_PATH).expanduser()


def load_config(path: Path | None = None, create: bool = True) -> ClusterConfig:
    path = path or config_path()
    if not path.exists():
        cfg = default_config()
        if create:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(cfg.text(), encoding="utf-8")
        return cfg
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return ClusterConfig.from_dict(doc)


def use_cluster(name: str, path: Path | None = None) -> ClusterConfig:
    """Point ``current`` at ``name``, rewriting only that line of the file."""
    path = path or config_path()
    cfg = load_config(path)
    cfg.get(name)
    text = path.read_text(encoding="utf-8")
    new, n = _CURRENT_LINE.subn(lambda m: f"{m.group(1)}{json.dumps(name)}{m.group(2)}", text,
                                count=1)
    if n != 1:
        raise ConfigError(f"{path}: no 'current' line to rewrite")
    path.write_text(new, encoding="utf-8")
    cfg.current = name
    return cfg
