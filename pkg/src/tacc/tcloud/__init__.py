"""Command-line client for a remote controller."""
from .client import Client, ConnectError
from .config import Cluster, ClusterConfig, ConfigError, load_config, use_cluster

__all__ = ["Client", "Cluster", "ClusterConfig", "ConfigError", "ConnectError", "load_config",
           "use_cluster"]
