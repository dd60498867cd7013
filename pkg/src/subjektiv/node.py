"""The deployable unit: config file, definition store, HTTP API, bus endpoint.

One node executes the agents of the subjects it hosts (its own company plus
untagged ones) and forwards everything else over the wire per its peer
table. Definitions and run logs persist under the store directory;
in-flight instances do not survive a restart.
"""

from __future__ import annotations

import json
import re
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any
from urllib.parse import parse_qs, urlparse

from . import model as M
from . import pdl
from .bus import BusServer, Remote, Router, RoutingTable
from .clock import CounterIds, RandomIds, VirtualClock, WallClock
from .engine import DuplicateEnvelope, Engine, EngineError, Envelope
from .tasks import TaskError, TaskService

DEFAULT_BUS_PORT = 7471
DEFAULT_HTTP_PORT = 7472
STORE_ENV = "SUBJEKTIV_STORE"
TICK_SECONDS = 0.025


class ConfigError(Exception):
    pass


def _host_port(value: str, what: str) -> tuple[str, int]:
    host, sep, port = value.rpartition(":")
    if not sep or not port.isdigit():
        raise ConfigError(f"{what} must be host:port, got {value!r}")
    return host or "127.0.0.1", int(port)


@dataclass
class NodeConfig:
    company: str = "default"
    listen_host: str = "127.0.0.1"
    listen_port: int = DEFAULT_BUS_PORT
    http_host: str = "127.0.0.1"
    http_port: int = DEFAULT_HTTP_PORT
    peers: list[Remote] = field(default_factory=list)
    store_dir: Path = Path("store")
    clock: str = "wall"  # wall | virtual
    pool_capacity: int = 64

    def check(self) -> None:
        if not self.company:
            raise ConfigError("company must be non-empty")
        if (self.listen_host, self.listen_port) == (self.http_host, self.http_port):
            raise ConfigError("bus and http ports must differ")
        if self.clock not in ("wall", "virtual"):
            raise ConfigError(f"clock must be wall or virtual, got {self.clock!r}")

    @classmethod
    def parse(cls, text: str, base_dir: Path | None = None) -> "NodeConfig":
        """Flat key=value lines; '#' comments; `peer` may repeat."""
        import os

        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, value = key.strip(), value.strip()
            if key == "company":
                cfg.company = value
            elif key == "listen":
                cfg.listen_host, cfg.listen_port = _host_port(value, "listen")
            elif key == "http":
                cfg.http_host, cfg.http_port = _host_port(value, "http")
            elif key == "peer":
                company, sep2, addr = value.partition(",")
                if not sep2:
                    raise ConfigError(f"line {lineno}: peer is company,host:port")
                host, port = _host_port(addr.strip(), "peer")
                cfg.peers.append(Remote(host, port, company.strip()))
            elif key == "store":
                cfg.store_dir = Path(value)
            elif key == "clock":
                cfg.clock = value
            elif key == "pool_capacity":
                cfg.pool_capacity = int(value)
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        env_store = os.environ.get(STORE_ENV)
        if env_store:
            cfg.store_dir = Path(env_store)
        elif base_dir is not None and not cfg.store_dir.is_absolute():
            cfg.store_dir = base_dir / cfg.store_dir
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "NodeConfig":
        p = Path(path)
        return cls.parse(p.read_text(encoding="utf-8"), base_dir=p.parent)


class Store:
    """processes/<name>.sbpm in canonical form; runs/<instance>.trace.jsonl."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.processes_dir = self.root / "processes"
        self.runs_dir = self.root / "runs"
        self.processes_dir.mkdir(parents=True, exist_ok=True)
        self.runs_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def save_process(self, name: str, canonical_source: str) -> Path:
        path = self.processes_dir / f"{name}.sbpm"
        path.write_text(canonical_source, encoding="utf-8")
        return path

    def load_processes(self) -> tuple[list[M.ProcessModel], list[str]]:
        models: list[M.ProcessModel] = []
        warnings: list[str] = []
        for path in sorted(self.processes_dir.glob("*.sbpm")):
            try:
                m = pdl.parse(path.read_text(encoding="utf-8"))
                report = M.validate(m)
                if not report.ok:
                    raise M.ModelError("INVALID_MODEL", f"{len(report.errors)} validation errors")
                models.append(m)
            except (pdl.PdlSyntaxError, M.ModelError, OSError) as exc:
                warnings.append(f"skipping {path.name}: {exc}")
        return models, warnings

    def append_trace(self, instance_id: str, record: dict[str, Any]) -> None:
        from .trace import dump_record

        path = self.runs_dir / f"{instance_id}.trace.jsonl"
        with self._lock, path.open("a", encoding="utf-8") as fh:
            fh.write(dump_record(record) + "\n")

    def read_trace(self, instance_id: str) -> list[dict[str, Any]]:
        from .trace import load_trace

        path = self.runs_dir / f"{instance_id}.trace.jsonl"
        if not path.exists():
            return []
        return load_trace(path.read_text(encoding="utf-8"))

    def append_dead_letter(self, entry: dict[str, Any]) -> None:
        path = self.runs_dir / "dead_letters.jsonl"
        with self._lock, path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


class Node:
    def __init__(self, config: NodeConfig):
        config.check()
        self.config = config
        self.store = Store(config.store_dir)
        node_key = f"{config.company}:{config.listen_port}"
        if config.clock == "virtual":
            clock, ids = VirtualClock(), CounterIds(node_key)
        else:
            clock, ids = WallClock(), RandomIds()
        self.engine = Engine(clock=clock, ids=ids, pool_capacity=config.pool_capacity)
        self.engine.add_trace_sink(self.store.append_trace)
        self.router = Router(self.engine, RoutingTable(), on_dead_letter=self.store.append_dead_letter)
        self.service = TaskService(self.engine, self.router)
        self.bus = BusServer(config.listen_host, config.listen_port, acceptor=self.accept_envelope)
        self.http = _make_http_server(self, config.http_host, config.http_port)
        self.startup_warnings: list[str] = []
        self._ticker: threading.Thread | None = None
        self._stop = threading.Event()
        models, warnings = self.store.load_processes()
        self.startup_warnings.extend(warnings)
        for m in models:
            self.engine.register(m)
            self._route_process(m)

    # -- hosting ------------------------------------------------------------

    def hosts(self, subject: M.SubjectDef) -> bool:
        return subject.company in (self.config.company, M.DEFAULT_COMPANY)

    def _peer_for(self, company: str) -> Remote | None:
        for peer in self.config.peers:
            if peer.company == company:
                return peer
        return None

    def _route_process(self, m: M.ProcessModel) -> None:
        for subject in m.subjects:
            if self.hosts(subject):
                continue
            peer = self._peer_for(subject.company)
            if peer is not None:
                self.router.table.set_remote(m.name, subject.name, peer)

    def _check_routable(self, m: M.ProcessModel) -> None:
        for subject in m.subjects:
            if not self.hosts(subject) and self.router.table.lookup(m.name, subject.name) is None:
                raise EngineError("UNROUTABLE", f"no peer for company {subject.company!r} (subject {subject.name})")

    # -- operations ----------------------------------------------------------

    def register_process(self, source: str) -> str:
        m = pdl.parse(source)  # PdlSyntaxError propagates
        report = M.validate(m)
        if not report.ok:
            raise ValidationFailed(report)
        self.store.save_process(m.name, pdl.serialize(m))
        self.engine.register(m)
        self._route_process(m)
        return m.name

    def start_instance(self, process: str, starters: dict[str, int], instance_id: str | None = None) -> str:
        m = self.engine.process_model(process)
        self._check_routable(m)
        local = {}
        for name, count in starters.items():
            if m.has_subject(name) and not self.hosts(m.subject(name)):
                raise EngineError("NOT_HOSTED", f"{name} belongs to {m.subject(name).company}")
            local[name] = count
        return self.service.start(process, local, instance_id)

    def accept_envelope(self, envelope: Envelope) -> None:
        """Bus-server inbound path; raises EngineError subclasses to nack."""
        m = self.engine.process_model(envelope.process)
        if not m.has_subject(envelope.to_agent.subject):
            raise EngineError("UNKNOWN_SUBJECT", envelope.to_agent.subject)
        if not self.hosts(m.subject(envelope.to_agent.subject)):
            raise EngineError("UNKNOWN_SUBJECT", f"{envelope.to_agent.subject} is not hosted here")
        self.engine.ensure_instance(envelope.process, envelope.instance)
        try:
            self.engine.deliver(envelope)
        finally:
            self.service.sync()

    def instance_view(self, instance_id: str, tail: int = 50) -> dict[str, Any]:
        process = self.engine.instance_process(instance_id)
        m = self.engine.process_model(process)
        agents = []
        for ag in self.engine.agents(instance_id):
            state = m.behavior(ag.agent.subject).state(ag.current_state)
            agents.append(
                {
                    "agent": str(ag.agent),
                    "subject": ag.agent.subject,
                    "index": ag.agent.index,
                    "state": ag.current_state,
                    "label": state.label,
                    "status": ag.status,
                    "pool": len(ag.pool.entries),
                }
            )
        trace = self.engine.trace_of(instance_id)
        return {
            "instance": instance_id,
            "process": process,
            "agents": agents,
            "trace_tail": trace[-tail:],
            "open_tasks": len(self.service.open_tasks(instance=instance_id)),
        }

    # -- lifecycle ------------------------------------------------------------

    def tick(self) -> None:
        fired = self.engine.fire_due_timers()
        pumped = self.router.pump()
        if fired or pumped:
            self.service.sync()

    def start(self) -> None:
        self.bus.start()
        threading.Thread(target=self.http.serve_forever, daemon=True).start()
        self._stop.clear()
        self._ticker = threading.Thread(target=self._tick_loop, daemon=True)
        self._ticker.start()

    def _tick_loop(self) -> None:
        while not self._stop.wait(TICK_SECONDS):
            if self.config.clock == "wall":
                self.tick()

    def stop(self) -> None:
        self._stop.set()
        self.bus.stop()
        self.http.shutdown()
        self.http.server_close()
        self.router.close()

    @property
    def http_port(self) -> int:
        return self.http.server_address[1]

    @property
    def bus_port(self) -> int:
        return self.bus.port


class ValidationFailed(Exception):
    def __init__(self, report: M.ValidationReport):
        super().__init__(f"{len(report.errors)} validation errors")
        self.report = report


# -- HTTP API ----------------------------------------------------------------

_TASK_STATUS = {"STALE_TASK": 409, "INVALID_CHOICE": 422, "UNKNOWN_TASK": 404}


class _ApiHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "subjektiv"

    @property
    def node(self) -> Node:
        return self.server.node

    def log_message(self, fmt: str, *args: Any) -> None:
        pass  # quiet; the trace log is the observable artifact

    def _send(self, status: int, body: Any) -> None:
        data = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.end_headers()
        self.wfile.write(data)

    def _body(self) -> bytes:
        length = int(self.headers.get("Content-Length") or 0)
        return self.rfile.read(length) if length else b""

    def do_OPTIONS(self) -> None:  # CORS preflight
        self._send(204, {})

    def do_GET(self) -> None:
        url = urlparse(self.path)
        try:
            if url.path == "/health":
                self._send(
                    200,
                    {
                        "status": "ok",
                        "company": self.node.config.company,
                        "processes": self.node.engine.processes(),
                        "clock_ms": self.node.engine.clock.now,
                    },
                )
            elif url.path == "/processes":
                out = []
                for name in self.node.engine.processes():
                    m = self.node.engine.process_model(name)
                    out.append({"name": name, "subjects": [s.name for s in m.subjects]})
                self._send(200, out)
            elif url.path == "/instances":
                self._send(200, self.node.engine.instance_ids())
            elif match := re.fullmatch(r"/instances/([^/]+)", url.path):
                self._send(200, self.node.instance_view(match.group(1)))
            elif url.path == "/tasks":
                query = parse_qs(url.query)
                tasks = self.node.service.open_tasks(
                    subject=query.get("subject", [None])[0],
                    instance=query.get("instance", [None])[0],
                    company=query.get("company", [None])[0],
                )
                self._send(200, [self.node.service.describe(t) for t in tasks])
            else:
                self._send(404, {"error": "NOT_FOUND", "message": url.path})
        except EngineError as exc:
            self._send(404, {"error": exc.code, "message": str(exc)})

    def do_POST(self) -> None:
        url = urlparse(self.path)
        try:
            if url.path == "/processes":
                self._post_process()
            elif url.path == "/instances":
                self._post_instance()
            elif match := re.fullmatch(r"/tasks/([^/]+)/complete", url.path):
                self._post_complete(match.group(1))
            else:
                self._send(404, {"error": "NOT_FOUND", "message": url.path})
        except json.JSONDecodeError as exc:
            self._send(400, {"error": "BAD_JSON", "message": str(exc)})

    def _post_process(self) -> None:
        raw = self._body().decode("utf-8")
        content_type = (self.headers.get("Content-Type") or "").split(";")[0].strip()
        source = json.loads(raw).get("source", "") if content_type == "application/json" else raw
        try:
            name = self.node.register_process(source)
        except pdl.PdlSyntaxError as exc:
            self._send(422, {"error": "SYNTAX", "message": str(exc)})
            return
        except ValidationFailed as exc:
            violations = [
                {"rule": v.rule, "location": v.location, "message": v.message, "severity": v.severity}
                for v in exc.report.violations
            ]
            self._send(422, {"error": "INVALID_MODEL", "violations": violations})
            return
        self._send(201, {"name": name})

    def _post_instance(self) -> None:
        body = json.loads(self._body().decode("utf-8") or "{}")
        process = body.get("process", "")
        starters = {str(k): int(v) for k, v in (body.get("starters") or {}).items()}
        try:
            iid = self.node.start_instance(process, starters, body.get("instance"))
        except EngineError as exc:
            status = 404 if exc.code == "UNKNOWN_PROCESS" else 422
            self._send(status, {"error": exc.code, "message": str(exc)})
            return
        self._send(201, {"instance": iid})

    def _post_complete(self, task_id: str) -> None:
        body = json.loads(self._body().decode("utf-8") or "{}")
        try:
            result = self.node.service.complete(task_id, body.get("choice", {}))
        except TaskError as exc:
            self._send(_TASK_STATUS.get(exc.code, 422), {"error": exc.code, "message": str(exc)})
            return
        self._send(200, result)


class _ApiServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True


def _make_http_server(node: Node, host: str, port: int) -> _ApiServer:
    server = _ApiServer((host, port), _ApiHandler)
    server.node = node
    return server


def serve_forever(config: NodeConfig) -> Node:
    """Start a node and block until interrupted (CLI `serve`)."""
    node = Node(config)
    node.start()
    for warning in node.startup_warnings:
        print(f"warning: {warning}", flush=True)
    print(
        json.dumps(
            {"ready": True, "company": config.company, "http": node.http_port, "bus": node.bus_port}
        ),
        flush=True,
    )
    try:
        while True:
            time.sleep(0.5)
    except KeyboardInterrupt:
        pass
    finally:
        node.stop()
    return node
