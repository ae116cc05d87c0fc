"""Execution layer: backend registry, selection, provisioning, supervision."""
from .base import Backend, PreemptAck, ProvisionRequest, TaskEvent, TaskHandle, glob_match, job_env
from .local import LocalProcessBackend
from .registry import (BackendDescriptor, Capabilities, FactorRecord, Registry, RuntimeChars,
                       SelectionRules, SelectionTrace, StaticChars, failover, guess_language,
                       select_backend)
from .simulated import SIM_COMMAND, ScriptEvent, SimulatedBackend, parse_script

__all__ = [
    "Backend", "BackendDescriptor", "Capabilities", "FactorRecord", "LocalProcessBackend",
    "PreemptAck", "ProvisionRequest", "Registry", "RuntimeChars", "SIM_COMMAND",
    "ScriptEvent", "SelectionRules", "SelectionTrace", "SimulatedBackend", "StaticChars",
    "TaskEvent", "TaskHandle", "failover", "glob_match", "guess_language", "job_env",
    "parse_script", "select_backend",
]
