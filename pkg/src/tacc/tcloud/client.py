"""Protocol client over TCP or an ssh-launched relay."""
from __future__ import annotations

import os
import shlex
import socket
import subprocess
from collections import Counter
from typing import BinaryIO, Iterator

from ..controld import protocol
from ..errors import ProtocolError, from_wire
from .config import Cluster

SSH_ENV = "TCLOUD_SSH"
DEFAULT_PORT = 7621


class ConnectError(Exception):
    """The controller could not be reached or the connection dropped."""


class Client:
    def __init__(self, rfile: BinaryIO, wfile: BinaryIO, closer=None, endpoint: str = ""):
        self.rfile = rfile
        self.wfile = wfile
        self._closer = closer
        self.endpoint = endpoint
        self.sent: Counter[str] = Counter()
        self._next = 0

    # -- connection
    @classmethod
    def connect(cls, cluster: Cluster, timeout: float = 10.0) -> Client:
        ep = cluster.endpoint
        if ep.startswith("ssh:"):
            client = cls._ssh(ep[4:].lstrip("/"), cluster.flags)
        else:
            client = cls._tcp(ep[6:] if ep.startswith("tcp://") else ep, timeout)
        client.hello()
        return client

    @classmethod
    def _tcp(cls, hostport: str, timeout: float) -> Client:
        host, _, port = hostport.rpartition(":")
        try:
            sock = socket.create_connection((host or "127.0.0.1", int(port or DEFAULT_PORT)),
                                            timeout=timeout)
        except (OSError, ValueError) as exc:
            raise ConnectError(f"cannot connect to {hostport}: {exc}") from None
        sock.settimeout(None)
        rfile, wfile = sock.makefile("rb"), sock.makefile("wb")

        def close():
            for f in (rfile, wfile):
                try:
                    f.close()
                except OSError:
                    pass
            sock.close()

        return cls(rfile, wfile, close, endpoint=f"tcp://{hostport}")

    @classmethod
    def _ssh(cls, target: str, flags: dict) -> Client:
        port = int(flags.get("remote_port", DEFAULT_PORT))
        argv = shlex.split(os.environ.get(SSH_ENV, "ssh")) + [
            target, "tacc-controld", "relay", "--port", str(port)]
        try:
            proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        except OSError as exc:
            raise ConnectError(f"cannot run ssh: {exc}") from None

        def close():
            for f in (proc.stdin, proc.stdout):
                try:
                    f.close()
                except OSError:
                    pass
            try:
                proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                proc.kill()

        return cls(proc.stdout, proc.stdin, close, endpoint=f"ssh:{target}")

    def close(self) -> None:
        if self._closer:
            self._closer()
            self._closer = None

    def __enter__(self) -> Client:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- framing
    def send(self, ftype: str, payload: dict) -> str:
        self._next += 1
        fid = str(self._next)
        try:
            protocol.write_frame(self.wfile, fid, ftype, payload)
        except OSError as exc:
            raise ConnectError(f"connection lost: {exc}") from None
        self.sent[ftype] += 1
        return fid

    def recv(self) -> dict:
        try:
            frame = protocol.read_frame(self.rfile)
        except OSError as exc:
            raise ConnectError(f"connection lost: {exc}") from None
        if frame is None:
            raise ConnectError("connection closed by controller")
        if frame["type"] == "ERROR":
            raise from_wire(frame["payload"].get("error", {}))
        return frame

    def request(self, ftype: str, payload: dict) -> dict:
        self.send(ftype, payload)
        return self.recv()["payload"]

    # -- operations
    def hello(self) -> dict:
        return self.request("HELLO", {"version": protocol.VERSION})

    def cas_check(self, hashes: list[str]) -> list[str]:
        return list(self.request("CAS_CHECK", {"hashes": hashes})["missing"])

    def cas_put(self, data: bytes, kind: str = "object") -> str:
        self.send("CAS_PUT", {"kind": kind})
        try:
            protocol.write_binary(self.wfile, data)
        except OSError as exc:
            raise ConnectError(f"connection lost: {exc}") from None
        return self.recv()["payload"]["stored"]

    def submit(self, spec_doc: str, bundle_id: str) -> str:
        return self.request("SUBMIT", {"spec_doc": spec_doc, "manifest": bundle_id})["job_id"]

    def list_jobs(self, filt: dict | None = None) -> list[dict]:
        return self.request("LIST", {"filter": filt or {}})["jobs"]

    def status(self, job_id: str) -> dict:
        return self.request("STATUS", {"job_id": job_id})

    def logs(self, job_id: str, follow: bool = False, since_seq: int = 0) -> Iterator[dict]:
        self.send("LOGS", {"job_id": job_id, "follow": follow, "since_seq": since_seq})
        while True:
            payload = self.recv()["payload"]
            if payload.get("eof"):
                return
            yield payload

    def fetch(self, job_id: str, glob: str) -> bytes:
        self.request("FETCH", {"job_id": job_id, "glob": glob})
        try:
            _, data = protocol.read_binary(self.rfile)
        except OSError as exc:
            raise ConnectError(f"connection lost: {exc}") from None
        except ProtocolError as exc:
            raise ConnectError(str(exc)) from None
        return data

    def kill(self, job_id: str) -> dict:
        return self.request("KILL", {"job_id": job_id})
