"""Run-trace records: serialization, canonical logical form, diffing.

A raw trace is the per-node command log (one JSON object per line). Two
runs of the same choreography on different deployments cannot be compared
byte-for-byte: node-local sequence numbers, clocks, envelope ids and the
eager/lazy instantiation split all differ. `canonical_logical` reduces
traces to a deployment-independent form: per-agent command chains merged
in causal order (a delivery never precedes the send that emitted it),
timestamps and pool bookkeeping stripped, envelope ids renamed in order of
first appearance.
"""

from __future__ import annotations

import json
from typing import Any


def dump_record(record: dict[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def dump_trace(records: list[dict[str, Any]]) -> str:
    return "".join(dump_record(r) + "\n" for r in records)


def load_trace(text: str) -> list[dict[str, Any]]:
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def _agent_key(agent: str) -> tuple[str, int]:
    subject, _, index = agent.rpartition("#")
    return (subject, int(index))


def _normalize(record: dict[str, Any]) -> dict[str, Any]:
    """Project a raw record onto its deployment-independent core."""
    detail = record["detail"]
    kind = record["kind"]
    out: dict[str, Any] = {"kind": kind, "agent": record["agent"]}
    if kind == "decision":
        out["state"] = detail["state"]
        out["decision"] = detail["kind"]
        out["choice"] = _strip_choice(detail["choice"])
        out["to"] = detail["to"]
        if detail.get("emitted"):
            out["emitted"] = [
                {"id": e["id"], "type": e["type"], "to": e["to"]} for e in detail["emitted"]
            ]
    elif kind == "deliver":
        env = detail["envelope"]
        out["envelope"] = {
            "id": env["id"],
            "type": env["type"],
            "from": env["from"],
            "payload": env.get("payload", {}),
        }
    elif kind == "timeout":
        out["state"] = detail["state"]
        out["to"] = detail["to"]
    return out


def _strip_choice(choice: dict[str, Any]) -> dict[str, Any]:
    out = dict(choice)
    if "envelope" in out:
        env = out["envelope"]
        out["envelope"] = {"id": env["id"], "type": env["type"], "from": env["from"]}
    return out


def _producer_map(chains: dict[tuple[str, int], list[dict[str, Any]]]) -> dict[str, tuple[tuple[str, int], int]]:
    producers: dict[str, tuple[tuple[str, int], int]] = {}
    for key, chain in chains.items():
        for pos, rec in enumerate(chain):
            for e in rec.get("emitted", ()):
                producers[e["id"]] = (key, pos)
    return producers


def canonical_logical(traces: list[list[dict[str, Any]]]) -> list[dict[str, Any]]:
    """Merge one or more node traces into the canonical logical trace.

    Each agent must appear in exactly one input trace (agents live on one
    node). `instantiate` records are dropped: starter placement is a
    deployment choice, not choreography behavior.
    """
    chains: dict[tuple[str, int], list[dict[str, Any]]] = {}
    for records in traces:
        for rec in records:
            if rec["kind"] == "instantiate" or rec["agent"] is None:
                continue
            chains.setdefault(_agent_key(rec["agent"]), []).append(_normalize(rec))

    producers = _producer_map(chains)
    emitted_done: set[str] = set()
    cursor = {key: 0 for key in chains}
    merged: list[dict[str, Any]] = []

    def ready(key: tuple[str, int]) -> bool:
        pos = cursor[key]
        if pos >= len(chains[key]):
            return False
        rec = chains[key][pos]
        if rec["kind"] == "deliver":
            env_id = rec["envelope"]["id"]
            if env_id in producers and env_id not in emitted_done:
                return False
        return True

    total = sum(len(c) for c in chains.values())
    while len(merged) < total:
        candidates = sorted(key for key in chains if ready(key))
        if not candidates:
            raise ValueError("causal cycle in trace merge (corrupt trace?)")
        key = candidates[0]
        rec = chains[key][cursor[key]]
        cursor[key] += 1
        for e in rec.get("emitted", ()):
            emitted_done.add(e["id"])
        merged.append(rec)

    return _alias_envelope_ids(merged)


def _alias_envelope_ids(records: list[dict[str, Any]]) -> list[dict[str, Any]]:
    alias: dict[str, str] = {}

    def rename(env_id: str) -> str:
        if env_id not in alias:
            alias[env_id] = f"m{len(alias) + 1}"
        return alias[env_id]

    out = []
    for rec in records:
        rec = json.loads(json.dumps(rec))  # deep copy
        for e in rec.get("emitted", ()):
            e["id"] = rename(e["id"])
        if "envelope" in rec:
            rec["envelope"]["id"] = rename(rec["envelope"]["id"])
        choice = rec.get("choice", {})
        if isinstance(choice, dict) and "envelope" in choice:
            choice["envelope"]["id"] = rename(choice["envelope"]["id"])
        out.append(rec)
    return out


def first_divergence(a: list[dict[str, Any]], b: list[dict[str, Any]]) -> int | None:
    """Index of the first differing record, or None when equal."""
    for i, (ra, rb) in enumerate(zip(a, b)):
        if ra != rb:
            return i
    if len(a) != len(b):
        return min(len(a), len(b))
    return None
