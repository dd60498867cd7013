"""Envelope routing: in-process dispatch locally, NDJSON frames between nodes.

One frame per line, UTF-8: {"v": 1, "kind": "envelope"|"ack"|"nack", ...}.
Receivers deduplicate on envelope id, so retries and duplicate frames are
at-most-once-visible. POOL_FULL and connection failures are retried with
exponential backoff (100 ms base, factor 2, 5 attempts) before the
envelope is dead-lettered; UNKNOWN_* rejections are dead-lettered at once.
"""

from __future__ import annotations

import json
import socket
import socketserver
import threading
from dataclasses import dataclass, field
from typing import Any, Callable

from .engine import DuplicateEnvelope, Engine, EngineError, Envelope, PoolFull

PROTOCOL_VERSION = 1
DEFAULT_PORT = 7471

RETRY_BASE_MS = 100
RETRY_FACTOR = 2
RETRY_ATTEMPTS = 5

DELIVERED_LOCAL = "delivered_local"
FORWARDED = "forwarded"
FAILED = "failed"

_RETRYABLE = ("POOL_FULL", "CONNECT")


class BusError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass(frozen=True)
class Remote:
    host: str
    port: int
    company: str


@dataclass
class RoutingTable:
    """(process, subject) -> endpoint; anything unlisted is local."""

    entries: dict[tuple[str, str], Remote] = field(default_factory=dict)

    def set_remote(self, process: str, subject: str, remote: Remote) -> None:
        self.entries[(process, subject)] = remote

    def lookup(self, process: str, subject: str) -> Remote | None:
        return self.entries.get((process, subject))


def encode_frame(frame: dict[str, Any]) -> bytes:
    return (json.dumps(frame, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def decode_frame(line: bytes) -> dict[str, Any]:
    obj = json.loads(line.decode("utf-8"))
    if not isinstance(obj, dict):
        raise ValueError("frame is not an object")
    return obj


def envelope_frame(envelope: Envelope) -> dict[str, Any]:
    return {"v": PROTOCOL_VERSION, "kind": "envelope", "envelope": envelope.to_wire()}


def ack_frame(ref: str) -> dict[str, Any]:
    return {"v": PROTOCOL_VERSION, "kind": "ack", "ref": ref}


def nack_frame(ref: str, reason: str) -> dict[str, Any]:
    return {"v": PROTOCOL_VERSION, "kind": "nack", "ref": ref, "reason": reason}


class _Peer:
    """One ordered frame stream to a remote node; reconnects lazily."""

    def __init__(self, host: str, port: int, timeout: float = 5.0):
        self.host = host
        self.port = port
        self.timeout = timeout
        self._lock = threading.Lock()
        self._sock: socket.socket | None = None
        self._file = None

    def _connect(self):
        self._sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
        self._file = self._sock.makefile("rwb")

    def _close_locked(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None
            self._file = None

    def close(self) -> None:
        with self._lock:
            self._close_locked()

    def exchange(self, frame: dict[str, Any]) -> dict[str, Any]:
        """Send one frame, wait for its ack/nack. Raises BusError(CONNECT)."""
        with self._lock:
            try:
                if self._sock is None:
                    self._connect()
                self._file.write(encode_frame(frame))
                self._file.flush()
                line = self._file.readline()
                if not line:
                    raise OSError("connection closed")
                return decode_frame(line)
            except (OSError, ValueError) as exc:
                self._close_locked()
                raise BusError("CONNECT", f"{self.host}:{self.port}: {exc}") from exc


@dataclass
class _Retry:
    due_ms: int
    attempts: int
    envelope: Envelope


class Router:
    """Routes envelopes per the table; owns the retry queue and dead letters."""

    def __init__(
        self,
        engine: Engine,
        table: RoutingTable | None = None,
        on_dead_letter: Callable[[dict[str, Any]], None] | None = None,
    ):
        self.engine = engine
        self.table = table or RoutingTable()
        self.pending: list[_Retry] = []
        self.dead_letters: list[dict[str, Any]] = []
        self._peers: dict[tuple[str, int], _Peer] = {}
        self._lock = threading.RLock()
        self._on_dead_letter = on_dead_letter

    def _peer(self, remote: Remote) -> _Peer:
        key = (remote.host, remote.port)
        with self._lock:
            if key not in self._peers:
                self._peers[key] = _Peer(remote.host, remote.port)
            return self._peers[key]

    def close(self) -> None:
        with self._lock:
            for peer in self._peers.values():
                peer.close()

    def route(self, envelope: Envelope) -> str:
        """Returns delivered_local | forwarded | failed:<reason>.

        Retryable failures are queued; call pump() as the clock moves.
        """
        return self._attempt(envelope, attempts=1)

    def _attempt(self, envelope: Envelope, attempts: int) -> str:
        remote = self.table.lookup(envelope.process, envelope.to_agent.subject)
        if remote is None:
            outcome, reason = self._deliver_local(envelope)
        else:
            outcome, reason = self._forward(envelope, remote)
        if outcome == FAILED:
            if reason in _RETRYABLE and attempts < RETRY_ATTEMPTS:
                delay = RETRY_BASE_MS * RETRY_FACTOR ** (attempts - 1)
                with self._lock:
                    self.pending.append(_Retry(self.engine.clock.now + delay, attempts, envelope))
            else:
                self._dead_letter(envelope, reason, attempts)
            return f"{FAILED}:{reason}"
        return outcome

    def _deliver_local(self, envelope: Envelope) -> tuple[str, str]:
        try:
            self.engine.deliver(envelope)
            return DELIVERED_LOCAL, ""
        except DuplicateEnvelope:
            return DELIVERED_LOCAL, ""  # already visible once; drop silently
        except PoolFull:
            return FAILED, "POOL_FULL"
        except EngineError as exc:
            raise BusError("UNROUTABLE", f"{envelope.to_agent}: {exc.code}") from exc

    def _forward(self, envelope: Envelope, remote: Remote) -> tuple[str, str]:
        peer = self._peer(remote)
        try:
            reply = peer.exchange(envelope_frame(envelope))
        except BusError:
            return FAILED, "CONNECT"
        if reply.get("kind") == "ack":
            return FORWARDED, ""
        reason = reply.get("reason", "BAD_FRAME")
        return FAILED, reason

    def _dead_letter(self, envelope: Envelope, reason: str, attempts: int) -> None:
        entry = {
            "envelope": envelope.to_wire(),
            "reason": reason,
            "attempts": attempts,
            "at_ms": self.engine.clock.now,
        }
        with self._lock:
            self.dead_letters.append(entry)
        if self._on_dead_letter is not None:
            self._on_dead_letter(entry)

    def next_due(self) -> int | None:
        with self._lock:
            return min((r.due_ms for r in self.pending), default=None)

    def pump(self, now_ms: int | None = None) -> int:
        """Re-attempt every retry that has come due; returns how many ran."""
        now = self.engine.clock.now if now_ms is None else now_ms
        with self._lock:
            due = [r for r in self.pending if r.due_ms <= now]
            self.pending = [r for r in self.pending if r.due_ms > now]
        for r in sorted(due, key=lambda r: (r.due_ms, r.envelope.id)):
            self._attempt(r.envelope, r.attempts + 1)
        return len(due)


class _FrameHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        while True:
            try:
                line = self.rfile.readline()
            except OSError:
                return
            if not line:
                return
            if not line.strip():
                continue
            reply = self.server.bus_server.handle_frame(line)
            try:
                self.wfile.write(encode_frame(reply))
            except OSError:
                return


class _ThreadingServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class BusServer:
    """Accepts envelope frames and hands them to the node's acceptor.

    The acceptor raises EngineError/PoolFull to nack; DuplicateEnvelope is
    acked without redelivery. A malformed line nacks BAD_FRAME and keeps
    the connection open.
    """

    def __init__(self, host: str, port: int, acceptor: Callable[[Envelope], None]):
        self.acceptor = acceptor
        self._server = _ThreadingServer((host, port), _FrameHandler)
        self._server.bus_server = self
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    def handle_frame(self, line: bytes) -> dict[str, Any]:
        try:
            frame = decode_frame(line)
        except (ValueError, UnicodeDecodeError):
            return nack_frame("", "BAD_FRAME")
        ref = ""
        if isinstance(frame.get("envelope"), dict):
            ref = str(frame["envelope"].get("id", ""))
        if frame.get("v") != PROTOCOL_VERSION or frame.get("kind") != "envelope":
            return nack_frame(ref, "BAD_FRAME")
        try:
            envelope = Envelope.from_wire(frame["envelope"])
        except (KeyError, TypeError, ValueError):
            return nack_frame(ref, "BAD_FRAME")
        try:
            self.acceptor(envelope)
        except DuplicateEnvelope:
            return ack_frame(envelope.id)
        except PoolFull:
            return nack_frame(envelope.id, "POOL_FULL")
        except EngineError as exc:
            reason = exc.code if exc.code in ("UNKNOWN_PROCESS", "UNKNOWN_SUBJECT") else "UNKNOWN_SUBJECT"
            return nack_frame(envelope.id, reason)
        return ack_frame(envelope.id)

    def start(self) -> None:
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
