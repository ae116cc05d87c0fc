"""Serve the wire protocol over TCP (or any byte stream) for one controller."""
from __future__ import annotations

import logging
import socketserver
import threading
from typing import BinaryIO

from ..bundle import BundleManifest
from ..errors import ProtocolError, TaccError
from . import protocol
from .controller import Controller

log = logging.getLogger(__name__)


class Session:
    """One client connection; handlers never hold controller locks while waiting."""

    def __init__(self, controller: Controller, rfile: BinaryIO, wfile: BinaryIO):
        self.ctl = controller
        self.rfile = rfile
        self.wfile = wfile
        self.greeted = False

    def reply(self, frame_id: str, ftype: str, payload: dict) -> None:
        protocol.write_frame(self.wfile, frame_id, ftype, payload)

    def error(self, frame_id: str, exc: TaccError) -> None:
        self.reply(frame_id, "ERROR", {"error": exc.to_wire()})

    def run(self) -> None:
        while True:
            try:
                frame = protocol.read_frame(self.rfile)
            except ProtocolError as exc:
                self.error("", exc)
                return
            if frame is None:
                return
            fid, ftype, payload = frame["id"], frame["type"], frame["payload"]
            handler = getattr(self, f"on_{ftype.lower()}", None)
            if ftype not in protocol.REQUEST_TYPES or handler is None:
                self.error(fid, ProtocolError(f"unknown frame type {ftype!r}"))
                continue
            if not self.greeted and ftype != "HELLO":
                self.error(fid, ProtocolError("HELLO required first"))
                continue
            try:
                handler(fid, payload)
            except ProtocolError as exc:
                self.error(fid, exc)
                return  # the byte stream may be out of step; drop the session
            except TaccError as exc:
                self.error(fid, exc)
            except (KeyError, TypeError, ValueError) as exc:
                self.error(fid, ProtocolError(f"bad {ftype} payload: {exc}"))

    # -- handlers
    def on_hello(self, fid: str, p: dict) -> None:
        if int(p.get("version", -1)) != protocol.VERSION:
            raise ProtocolError(f"unsupported protocol version {p.get('version')!r}")
        self.greeted = True
        self.reply(fid, "HELLO", {"version": protocol.VERSION, "server": "tacc-controld"})

    def on_cas_check(self, fid: str, p: dict) -> None:
        hashes = list(p["hashes"])
        store = self.ctl.store
        missing = [h for h in hashes if not (store.has(h) or store.has_manifest(h))]
        self.reply(fid, "CAS_CHECK", {"missing": missing})

    def on_cas_put(self, fid: str, p: dict) -> None:
        kind = p.get("kind", "object")
        digest, data = protocol.read_binary(self.rfile)
        if kind == "manifest":
            manifest = BundleManifest.from_text(data.decode("utf-8"))
            stored = self.ctl.store.put_manifest(manifest.text(), digest)
        elif kind == "object":
            stored = self.ctl.store.put(data, digest)
        else:
            raise ProtocolError(f"unknown CAS_PUT kind {kind!r}")
        self.reply(fid, "CAS_PUT", {"stored": stored})

    def on_submit(self, fid: str, p: dict) -> None:
        job_id = self.ctl.submit(p["spec_doc"], p["manifest"])
        self.reply(fid, "SUBMIT", {"job_id": job_id})

    def on_list(self, fid: str, p: dict) -> None:
        self.reply(fid, "LIST", {"jobs": self.ctl.list_jobs(p.get("filter") or {})})

    def on_status(self, fid: str, p: dict) -> None:
        self.reply(fid, "STATUS", self.ctl.status(p["job_id"]))

    def on_logs(self, fid: str, p: dict) -> None:
        lines = self.ctl.attach_logs(p["job_id"], bool(p.get("follow", False)),
                                     int(p.get("since_seq", 0)))
        for line in lines:
            self.reply(fid, "LOGS", line.to_dict())
        self.reply(fid, "LOGS", {"eof": True})

    def on_fetch(self, fid: str, p: dict) -> None:
        archive = self.ctl.fetch_files(p["job_id"], p.get("glob", "**"))
        self.reply(fid, "FETCH", {"size": len(archive)})
        protocol.write_binary(self.wfile, archive)

    def on_kill(self, fid: str, p: dict) -> None:
        state = self.ctl.kill(p["job_id"])
        self.reply(fid, "KILL", {"job_id": p["job_id"], "state": state})


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        try:
            Session(self.server.controller, self.rfile, self.wfile).run()
        except (BrokenPipeError, ConnectionResetError):
            pass


class ControllerServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, controller: Controller, host: str = "127.0.0.1", port: int = 0):
        self.controller = controller
        super().__init__((host, port), _Handler)

    @property
    def port(self) -> int:
        return self.server_address[1]

    def start_background(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, name="tacc-server", daemon=True)
        t.start()
        return t
