"""Error types shared by every layer.

Each error carries a stable ``code`` string; the controller puts the same
code on the wire, and the CLI maps it to an exit status.
"""
from __future__ import annotations


class TaccError(Exception):
    code = "INTERNAL"

    def __init__(self, message: str = "", *, field: str | None = None):
        super().__init__(message)
        self.message = message
        self.field = field

    def __str__(self) -> str:
        if self.field:
            return f"{self.code} at `{self.field}`: {self.message}"
        return f"{self.code}: {self.message}"

    def to_wire(self) -> dict:
        out = {"code": self.code, "message": self.message}
        if self.field:
            out["field"] = self.field
        return out


class SchemaInvalid(TaccError):
    code = "SCHEMA_INVALID"


class Unsatisfiable(TaccError):
    code = "UNSATISFIABLE"


class QuotaExceeded(TaccError):
    code = "QUOTA_EXCEEDED"


class NotFound(TaccError):
    code = "NOT_FOUND"


class StateConflict(TaccError):
    code = "STATE_CONFLICT"


class SequenceGap(TaccError):
    code = "SEQUENCE_GAP"


class BackendUnavailable(TaccError):
    code = "BACKEND_UNAVAILABLE"


class ProvisionFailed(TaccError):
    code = "PROVISION_FAILED"

    def __init__(self, node: str, cause: str):
        super().__init__(f"node {node}: {cause}")
        self.node = node
        self.cause = cause


class MissingObject(TaccError):
    code = "MISSING_OBJECT"

    def __init__(self, digest: str):
        super().__init__(f"object {digest} not in store")
        self.digest = digest


class BundleIOError(TaccError):
    code = "IO_ERROR"


class LogCorrupt(TaccError):
    code = "LOG_CORRUPT"

    def __init__(self, seq: int, reason: str = ""):
        super().__init__(f"record {seq}: {reason}" if reason else f"record {seq}")
        self.seq = seq


class ProtocolError(TaccError):
    code = "PROTOCOL_ERROR"


ERRORS_BY_CODE = {
    cls.code: cls
    for cls in (SchemaInvalid, Unsatisfiable, QuotaExceeded, NotFound,
                StateConflict, SequenceGap, BackendUnavailable, MissingObject,
                BundleIOError, LogCorrupt, ProtocolError)
}


def from_wire(err: dict) -> TaccError:
    """Rebuild a client-side exception from an ``{"code", "message"}`` dict."""
    code = err.get("code", "INTERNAL")
    exc = TaccError(err.get("message", ""), field=err.get("field"))
    exc.code = code
    return exc
