"""Run a corpus case split across real node processes on loopback.

Subjects are assigned to nodes; each node gets its own company tag, the
model is rewritten accordingly, and the run is driven over the HTTP API
with the case's decider script. PASS means the merged canonical logical
trace equals the canonicalized single-node golden and the final statuses
match.
"""

from __future__ import annotations

import json
import socket
import subprocess
import sys
import tempfile
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .. import pdl, trace
from .. import model as M
from ..tasks import DeciderScript, Task
from ..engine import AgentId
from . import CaseResult, case

DRIVE_TIMEOUT_S = 25.0
POLL_S = 0.04


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def _http(method: str, url: str, body: dict | None = None, timeout: float = 10.0) -> tuple[int, Any]:
    data = json.dumps(body).encode("utf-8") if body is not None else None
    req = urllib.request.Request(url, data=data, method=method)
    req.add_header("Content-Type", "application/json")
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.status, json.loads(resp.read().decode("utf-8") or "null")
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read().decode("utf-8") or "null")


@dataclass
class _NodeProc:
    company: str
    http_port: int
    bus_port: int
    store: Path
    proc: subprocess.Popen

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.http_port}"

    def stop(self) -> None:
        self.proc.terminate()
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()


def default_assignment(model: M.ProcessModel, starters: dict[str, int]) -> dict[str, int]:
    """Starter subjects on node 0, every other subject on node 1."""
    return {s.name: (0 if s.name in starters else 1) for s in model.subjects}


def _rewrite_companies(model: M.ProcessModel, assignment: dict[str, int]) -> M.ProcessModel:
    subjects = tuple(
        M.SubjectDef(s.name, s.kind, s.max_instances, f"c{assignment[s.name]}") for s in model.subjects
    )
    return M.ProcessModel(model.name, subjects, model.message_types, model.channels, model.behaviors)


def launch_node(company: str, bus_port: int, http_port: int, peers: list[tuple[str, int]], store: Path) -> _NodeProc:
    config = store / "node.cfg"
    lines = [
        f"company = {company}",
        f"listen = 127.0.0.1:{bus_port}",
        f"http = 127.0.0.1:{http_port}",
        f"store = {store}",
        "clock = wall",
    ]
    for peer_company, peer_port in peers:
        lines.append(f"peer = {peer_company},127.0.0.1:{peer_port}")
    config.write_text("\n".join(lines) + "\n", encoding="utf-8")
    proc = subprocess.Popen(
        [sys.executable, "-m", "subjektiv.cli", "serve", "--config", str(config)],
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
    )
    node = _NodeProc(company, http_port, bus_port, store, proc)
    deadline = time.time() + 15
    while time.time() < deadline:
        try:
            status, _ = _http("GET", f"{node.url}/health", timeout=1.0)
            if status == 200:
                return node
        except (urllib.error.URLError, OSError):
            pass
        if proc.poll() is not None:
            out, err = proc.communicate()
            raise RuntimeError(f"node {company} exited: {err or out}")
        time.sleep(0.05)
    node.stop()
    raise RuntimeError(f"node {company} did not come up")


class _TaskShim:
    """Adapter so DeciderScript rules match tasks served over HTTP."""

    def __init__(self, data: dict[str, Any]):
        self.id = data["id"]
        self.agent = AgentId(data["instance"], data["subject"], data["index"])
        self.state = data["state"]
        self.kind = data["kind"]
        self.occurrence = data["occurrence"]
        self.options = data["options"]


def _shim_choice(script: DeciderScript, shim: _TaskShim) -> dict[str, Any] | None:
    for rule in script.rules:
        if (
            rule.subject == shim.agent.subject
            and rule.state in ("any", shim.state)
            and rule.occurrence in ("any", shim.occurrence)
            and rule.index in ("any", shim.agent.index)
        ):
            return rule.choice
    if script.default in ("earliest", "first-branch"):
        if shim.kind == "branch":
            return {"branch": shim.options["labels"][0]}
        if shim.kind == "send_targets":
            return {"send": {}}
        return {"pick": "earliest"}
    return None


def run_case_distributed(
    name: str,
    assignment: dict[str, int] | None = None,
    variant: str | None = None,
) -> CaseResult:
    c = case(name)
    base_model = c.model()
    starters = c.starters(variant)
    if assignment is None:
        assignment = default_assignment(base_model, starters)
    missing = [s.name for s in base_model.subjects if s.name not in assignment]
    if missing:
        raise ValueError(f"assignment missing subjects: {missing}")
    node_indices = sorted(set(assignment.values()))
    if len(node_indices) < 2:
        raise ValueError("distributed run needs at least 2 nodes")

    rewritten = _rewrite_companies(base_model, assignment)
    source = pdl.serialize(rewritten)
    script = c.script(variant)
    expected_statuses, _ = c.expectations(variant)

    ports = {i: (free_port(), free_port()) for i in node_indices}  # (bus, http)
    nodes: dict[int, _NodeProc] = {}
    tmp = Path(tempfile.mkdtemp(prefix="subjektiv-dist-"))
    try:
        for i in node_indices:
            peers = [(f"c{j}", ports[j][0]) for j in node_indices if j != i]
            store = tmp / f"node{i}"
            store.mkdir(parents=True, exist_ok=True)
            nodes[i] = launch_node(f"c{i}", ports[i][0], ports[i][1], peers, store)

        for node in nodes.values():
            status, body = _http("POST", f"{node.url}/processes", {"source": source})
            if status != 201:
                raise RuntimeError(f"upload to {node.company} failed: {body}")

        starter_nodes = sorted({assignment[s] for s in starters})
        first = starter_nodes[0]
        status, body = _http(
            "POST",
            f"{nodes[first].url}/instances",
            {"process": base_model.name, "starters": {s: n for s, n in starters.items() if assignment[s] == first}},
        )
        if status != 201:
            raise RuntimeError(f"instance start failed: {body}")
        iid = body["instance"]
        for i in starter_nodes[1:]:
            rest = {s: n for s, n in starters.items() if assignment[s] == i}
            status, body = _http(
                "POST", f"{nodes[i].url}/instances", {"process": base_model.name, "starters": rest, "instance": iid}
            )
            if status != 201:
                raise RuntimeError(f"instance join failed: {body}")

        _drive(nodes, script, iid, expected_statuses)

        node_traces = [trace.load_trace(_trace_text(n, iid)) for n in nodes.values()]
        merged = trace.canonical_logical(node_traces)
        golden = trace.canonical_logical([c.golden(variant)])
        idx = trace.first_divergence(merged, golden)
        if idx is not None:
            got = json.dumps(merged[idx], sort_keys=True) if idx < len(merged) else "<end>"
            want = json.dumps(golden[idx], sort_keys=True) if idx < len(golden) else "<end>"
            return CaseResult(name, variant, False, f"logical trace diverges at {idx}:\n  got  {got}\n  want {want}", None)
        statuses = _gather_statuses(nodes, iid)
        if statuses != expected_statuses:
            return CaseResult(name, variant, False, f"statuses {statuses} != expected {expected_statuses}", None)
        return CaseResult(name, variant, True, "PASS", None)
    finally:
        for node in nodes.values():
            node.stop()


def _trace_text(node: _NodeProc, iid: str) -> str:
    path = node.store / "runs" / f"{iid}.trace.jsonl"
    return path.read_text(encoding="utf-8") if path.exists() else ""


def _gather_statuses(nodes: dict[int, _NodeProc], iid: str) -> dict[str, str]:
    statuses: dict[str, str] = {}
    for node in nodes.values():
        status, body = _http("GET", f"{node.url}/instances/{iid}")
        if status == 200:
            for agent in body["agents"]:
                statuses[agent["agent"]] = agent["status"]
    return statuses


def _drive(nodes: dict[int, _NodeProc], script: DeciderScript, iid: str, expected: dict[str, str]) -> None:
    deadline = time.time() + DRIVE_TIMEOUT_S
    while time.time() < deadline:
        progressed = False
        for node in nodes.values():
            status, tasks = _http("GET", f"{node.url}/tasks?instance={iid}")
            if status != 200:
                continue
            for data in tasks:
                shim = _TaskShim(data)
                choice = _shim_choice(script, shim)
                if choice is None or choice.get("skip"):
                    continue
                code, _body = _http("POST", f"{node.url}/tasks/{shim.id}/complete", {"choice": choice})
                if code == 200:
                    progressed = True
        if not progressed:
            if _gather_statuses(nodes, iid) == expected:
                return
            time.sleep(POLL_S)
    raise RuntimeError(f"distributed drive timed out; statuses {_gather_statuses(nodes, iid)}")
