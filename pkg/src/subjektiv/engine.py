"""Executes one node's agents: state machines, input pools, timers.

All mutations (decisions, deliveries, timer firings) are serialized through
one lock and appended to a per-instance trace, one JSON-able record per
command. Reads take the same lock briefly and return snapshots. Multiple
engines interact only via envelopes, never shared state.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Any, Callable

from . import model as M
from .clock import CounterIds, VirtualClock

RUNNING = "running"
WAITING_DECISION = "waiting_decision"
WAITING_MESSAGE = "waiting_message"
COMPLETED = "completed"

_ZERO = {"text": "", "int": 0, "dec": 0.0, "bool": False}


class EngineError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


class PoolFull(EngineError):
    def __init__(self, message: str):
        super().__init__("POOL_FULL", message)


class DuplicateEnvelope(EngineError):
    def __init__(self, envelope_id: str):
        super().__init__("DUPLICATE_ENVELOPE", envelope_id)


class StaleDecision(EngineError):
    def __init__(self, message: str):
        super().__init__("STALE_DECISION", message)


@dataclass(frozen=True)
class AgentId:
    instance: str
    subject: str
    index: int

    @property
    def key(self) -> tuple[str, int]:
        return (self.subject, self.index)

    def __str__(self) -> str:
        return f"{self.subject}#{self.index}"


@dataclass
class Envelope:
    id: str
    process: str
    instance: str
    from_agent: AgentId
    to_agent: AgentId
    message_type: str
    payload: dict[str, Any]
    sent_at: int
    arrived_at: int | None = None

    def to_wire(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "process": self.process,
            "instance": self.instance,
            "from_subject": self.from_agent.subject,
            "from_index": self.from_agent.index,
            "to_subject": self.to_agent.subject,
            "to_index": self.to_agent.index,
            "type": self.message_type,
            "payload": self.payload,
            "sent_at": self.sent_at,
        }

    @classmethod
    def from_wire(cls, obj: dict[str, Any]) -> "Envelope":
        return cls(
            id=obj["id"],
            process=obj["process"],
            instance=obj["instance"],
            from_agent=AgentId(obj["instance"], obj["from_subject"], int(obj["from_index"])),
            to_agent=AgentId(obj["instance"], obj["to_subject"], int(obj["to_index"])),
            message_type=obj["type"],
            payload=dict(obj.get("payload") or {}),
            sent_at=int(obj["sent_at"]),
        )

    def summary(self) -> dict[str, Any]:
        return {"id": self.id, "type": self.message_type, "from": str(self.from_agent)}


@dataclass
class InputPool:
    owner: AgentId
    capacity: int
    entries: list[Envelope] = field(default_factory=list)

    def insert(self, envelope: Envelope) -> None:
        if len(self.entries) >= self.capacity:
            raise PoolFull(f"pool of {self.owner} at capacity {self.capacity}")
        self.entries.append(envelope)
        self.entries.sort(key=lambda e: (e.arrived_at, e.id))

    def remove(self, envelope_id: str) -> Envelope:
        for i, e in enumerate(self.entries):
            if e.id == envelope_id:
                return self.entries.pop(i)
        raise EngineError("NO_SUCH_MESSAGE", envelope_id)


@dataclass
class AgentState:
    agent: AgentId
    current_state: str
    pool: InputPool
    status: str = RUNNING
    variables: dict[str, Any] = field(default_factory=dict)
    visits: dict[str, int] = field(default_factory=dict)

    def occurrence(self) -> int:
        return self.visits.get(self.current_state, 1)


@dataclass
class Decision:
    """One resolved choice for an agent's current state.

    Which fields matter depends on the state kind: `branch` for function
    states, `message_type`/`to_subject`/`targets` for send states,
    `envelope_id` for receive states. `payload` is optional everywhere.
    """

    agent: AgentId
    state: str
    branch: str | None = None
    message_type: str | None = None
    to_subject: str | None = None
    targets: list[int] | None = None
    envelope_id: str | None = None
    payload: dict[str, Any] | None = None


@dataclass
class _Instance:
    id: str
    model: M.ProcessModel
    agents: dict[tuple[str, int], AgentState] = field(default_factory=dict)
    seen: set[str] = field(default_factory=set)
    consumed: set[str] = field(default_factory=set)
    trace: list[dict[str, Any]] = field(default_factory=list)
    seq: int = 0
    timers: dict[tuple[str, int], tuple[int, str]] = field(default_factory=dict)
    # every (subject, index) this instance has created, addressed, or heard
    # from; remote agents appear here even though they live on another node
    known: set[tuple[str, int]] = field(default_factory=set)


def check_payload(payload: dict[str, Any] | None, schema: dict[str, str], where: str) -> dict[str, Any]:
    """Coerce a record onto a message schema; absent fields take zero values."""
    payload = payload or {}
    for key in payload:
        if key not in schema:
            raise EngineError("BAD_PAYLOAD", f"{where}: unknown field {key!r}")
    out: dict[str, Any] = {}
    for fname, ftype in schema.items():
        if fname not in payload:
            out[fname] = _ZERO[ftype]
            continue
        v = payload[fname]
        ok = (
            (ftype == "text" and isinstance(v, str))
            or (ftype == "int" and isinstance(v, int) and not isinstance(v, bool))
            or (ftype == "dec" and isinstance(v, (int, float)) and not isinstance(v, bool))
            or (ftype == "bool" and isinstance(v, bool))
        )
        if not ok:
            raise EngineError("BAD_PAYLOAD", f"{where}: field {fname!r} is not {ftype}")
        out[fname] = float(v) if ftype == "dec" else v
    return out


class Engine:
    def __init__(self, clock=None, ids=None, pool_capacity: int = 64, node_key: str = ""):
        self.clock = clock if clock is not None else VirtualClock()
        self.ids = ids if ids is not None else CounterIds(node_key)
        self.pool_capacity = pool_capacity
        self._models: dict[str, M.ProcessModel] = {}
        self._instances: dict[str, _Instance] = {}
        self._lock = threading.RLock()
        self._sinks: list[Callable[[str, dict[str, Any]], None]] = []

    # --- registration -----------------------------------------------------

    def register(self, process: M.ProcessModel) -> None:
        report = M.validate(process)
        if not report.ok:
            raise EngineError("INVALID_MODEL", f"{process.name}: {len(report.errors)} validation errors")
        with self._lock:
            self._models[process.name] = process

    def processes(self) -> list[str]:
        with self._lock:
            return sorted(self._models)

    def process_model(self, name: str) -> M.ProcessModel:
        with self._lock:
            if name not in self._models:
                raise EngineError("UNKNOWN_PROCESS", name)
            return self._models[name]

    def add_trace_sink(self, sink: Callable[[str, dict[str, Any]], None]) -> None:
        self._sinks.append(sink)

    # --- trace ------------------------------------------------------------

    def _record(self, inst: _Instance, kind: str, agent: AgentId | None, detail: dict[str, Any]) -> None:
        inst.seq += 1
        rec = {
            "seq": inst.seq,
            "at_ms": self.clock.now,
            "kind": kind,
            "agent": str(agent) if agent else None,
            "detail": detail,
        }
        inst.trace.append(rec)
        for sink in self._sinks:
            sink(inst.id, rec)

    # --- lifecycle --------------------------------------------------------

    def instantiate(self, process: str, starters: dict[str, int], instance_id: str | None = None) -> str:
        with self._lock:
            model = self.process_model(process)
            for b in model.behaviors:
                if len(b.start_states()) != 1:
                    raise EngineError("MULTIPLE_START", f"behavior {b.subject} must have exactly one start state")
            total = 0
            for name, count in starters.items():
                if not model.has_subject(name):
                    raise EngineError("UNKNOWN_SUBJECT", name)
                subject = model.subject(name)
                if subject.kind == M.EXTERNAL:
                    raise EngineError("EXTERNAL_STARTER", f"{name} is external and cannot be started locally")
                if count < 0 or count > subject.max_instances:
                    raise EngineError("BOUNDS", f"{name}: {count} outside 0..{subject.max_instances}")
                total += count
            if total == 0:
                raise EngineError("NO_STARTER", "no agents to start")
            iid = instance_id or self.ids.next()
            if iid in self._instances:
                raise EngineError("DUPLICATE_INSTANCE", iid)
            inst = _Instance(id=iid, model=model)
            self._instances[iid] = inst
            created: list[str] = []
            for subject in model.subjects:
                for index in range(starters.get(subject.name, 0)):
                    ag = self._create_agent(inst, subject.name, index)
                    created.append(str(ag.agent))
            self._record(inst, "instantiate", None, {"process": process, "agents": created})
            return iid

    def ensure_instance(self, process: str, instance_id: str) -> None:
        """Adopt an instance started elsewhere; agents appear on first delivery."""
        with self._lock:
            model = self.process_model(process)
            if instance_id not in self._instances:
                self._instances[instance_id] = _Instance(id=instance_id, model=model)

    def _create_agent(self, inst: _Instance, subject: str, index: int) -> AgentState:
        behavior = inst.model.behavior(subject)
        start = behavior.start_states()[0]
        agent_id = AgentId(inst.id, subject, index)
        ag = AgentState(
            agent=agent_id,
            current_state=start.id,
            pool=InputPool(owner=agent_id, capacity=self.pool_capacity),
        )
        inst.agents[agent_id.key] = ag
        inst.known.add(agent_id.key)
        self._enter_state(inst, ag, start.id)
        return ag

    def _enter_state(self, inst: _Instance, ag: AgentState, state_id: str) -> None:
        behavior = inst.model.behavior(ag.agent.subject)
        state = behavior.state(state_id)
        ag.current_state = state_id
        ag.visits[state_id] = ag.visits.get(state_id, 0) + 1
        inst.timers.pop(ag.agent.key, None)
        if state.is_end:
            ag.status = COMPLETED
            return
        timeout = behavior.timeout_of(state_id)
        if timeout is not None:
            inst.timers[ag.agent.key] = (self.clock.now + timeout.trigger.duration_ms, state_id)
        if state.kind == M.RECEIVE:
            ag.status = WAITING_DECISION if self._selectable(inst, ag) else WAITING_MESSAGE
        else:
            ag.status = WAITING_DECISION

    # --- decisions --------------------------------------------------------

    def apply_decision(self, decision: Decision) -> tuple[AgentState, list[Envelope]]:
        with self._lock:
            inst = self._instance(decision.agent.instance)
            ag = inst.agents.get(decision.agent.key)
            if ag is None:
                raise EngineError("UNKNOWN_AGENT", str(decision.agent))
            if ag.status == COMPLETED:
                raise StaleDecision(f"{ag.agent} already completed")
            if ag.current_state != decision.state or ag.status != WAITING_DECISION:
                raise StaleDecision(f"{ag.agent} no longer deciding at {decision.state}")
            behavior = inst.model.behavior(ag.agent.subject)
            state = behavior.state(decision.state)
            if state.kind == M.FUNCTION:
                emitted: list[Envelope] = []
                self._apply_branch(inst, ag, behavior, decision)
            elif state.kind == M.SEND:
                emitted = self._apply_send(inst, ag, behavior, decision)
            else:
                emitted = []
                self._apply_pick(inst, ag, behavior, decision)
            return ag, emitted

    def _apply_branch(self, inst: _Instance, ag: AgentState, behavior: M.BehaviorDef, d: Decision) -> None:
        target = None
        for t in behavior.outgoing(ag.current_state):
            if isinstance(t.trigger, M.Branch) and t.trigger.label == d.branch:
                target = t.to_state
                break
        if target is None:
            raise EngineError("NO_SUCH_BRANCH", f"{ag.agent}: no branch {d.branch!r} at {ag.current_state}")
        detail: dict[str, Any] = {"state": ag.current_state, "kind": "branch", "choice": {"branch": d.branch}}
        if d.payload:
            for key, value in d.payload.items():
                if not isinstance(key, str) or not isinstance(value, (str, int, float, bool)):
                    raise EngineError("BAD_PAYLOAD", f"{ag.agent}: variables take scalar fields")
            ag.variables.update(d.payload)
            detail["choice"]["payload"] = dict(d.payload)
        self._enter_state(inst, ag, target)
        detail["to"] = target
        detail["status"] = ag.status
        self._record(inst, "decision", ag.agent, detail)

    def _pick_send_arm(self, behavior: M.BehaviorDef, ag: AgentState, d: Decision) -> M.TransitionDef:
        arms = [t for t in behavior.outgoing(ag.current_state) if isinstance(t.trigger, M.Send)]
        if d.message_type is not None or d.to_subject is not None:
            arms = [
                t
                for t in arms
                if (d.message_type is None or t.trigger.message_type == d.message_type)
                and (d.to_subject is None or t.trigger.to_subject == d.to_subject)
            ]
        if not arms:
            raise EngineError("NO_SUCH_ARM", f"{ag.agent}: no matching send arm at {ag.current_state}")
        if len(arms) > 1:
            raise EngineError("AMBIGUOUS_ARM", f"{ag.agent}: specify message_type/to_subject at {ag.current_state}")
        return arms[0]

    def _apply_send(self, inst: _Instance, ag: AgentState, behavior: M.BehaviorDef, d: Decision) -> list[Envelope]:
        arm = self._pick_send_arm(behavior, ag, d)
        send: M.Send = arm.trigger
        to_subject = inst.model.subject(send.to_subject)
        card = send.cardinality
        if card.kind == "all":
            targets = sorted(i for (s, i) in inst.known if s == send.to_subject)
            if not targets:
                raise EngineError("NO_TARGETS", f"no instances of {send.to_subject} to address")
        elif d.targets is not None:
            targets = sorted(set(d.targets))
        elif card.kind == "choose":
            targets = list(range(card.min))
        else:
            targets = [0]
        if card.kind == "one" and len(targets) != 1:
            raise EngineError("FANOUT_BOUNDS", "cardinality one takes exactly one target")
        if card.kind == "choose" and not card.min <= len(targets) <= card.max:
            raise EngineError(
                "FANOUT_BOUNDS",
                f"{len(targets)} targets outside choose({card.min},{card.max})",
            )
        for index in targets:
            if index < 0 or index >= to_subject.max_instances:
                raise EngineError("BOUNDS", f"{send.to_subject}#{index} outside 0..{to_subject.max_instances - 1}")
        schema = inst.model.message_type(send.message_type).schema_dict()
        if d.payload is not None:
            payload = check_payload(d.payload, schema, str(ag.agent))
        else:
            payload = check_payload(
                {k: v for k, v in ag.variables.items() if k in schema}, schema, str(ag.agent)
            )
        emitted = [
            Envelope(
                id=self.ids.next(),
                process=inst.model.name,
                instance=inst.id,
                from_agent=ag.agent,
                to_agent=AgentId(inst.id, send.to_subject, index),
                message_type=send.message_type,
                payload=payload,
                sent_at=self.clock.now,
            )
            for index in targets
        ]
        inst.known.update((send.to_subject, index) for index in targets)
        self._enter_state(inst, ag, arm.to_state)
        self._record(
            inst,
            "decision",
            ag.agent,
            {
                "state": arm.from_state,
                "kind": "send",
                "choice": {
                    "type": send.message_type,
                    "to": [f"{send.to_subject}#{i}" for i in targets],
                    "payload": payload,
                },
                "emitted": [e.summary() | {"to": str(e.to_agent)} for e in emitted],
                "to": arm.to_state,
                "status": ag.status,
            },
        )
        return emitted

    def _apply_pick(self, inst: _Instance, ag: AgentState, behavior: M.BehaviorDef, d: Decision) -> None:
        state = behavior.state(ag.current_state)
        accepted = M.accepted_receives(state, behavior)
        envelope = None
        for e in ag.pool.entries:
            if e.id == d.envelope_id:
                envelope = e
                break
        if envelope is None:
            raise EngineError("NO_SUCH_MESSAGE", f"{ag.agent}: {d.envelope_id} not in pool")
        pair = (envelope.message_type, envelope.from_agent.subject)
        if pair not in accepted:
            raise EngineError("NOT_ACCEPTABLE", f"{ag.agent}: {pair} not accepted at {ag.current_state}")
        target = None
        for t in behavior.outgoing(ag.current_state):
            if (
                isinstance(t.trigger, M.Receive)
                and t.trigger.message_type == envelope.message_type
                and t.trigger.from_subject == envelope.from_agent.subject
            ):
                target = t.to_state
                break
        assert target is not None
        ag.pool.remove(envelope.id)
        inst.consumed.add(envelope.id)
        schema = inst.model.message_type(envelope.message_type).schema_dict()
        for fname in schema:
            if fname in envelope.payload:
                ag.variables[fname] = envelope.payload[fname]
        counter = f"received:{envelope.message_type}"
        ag.variables[counter] = ag.variables.get(counter, 0) + 1
        self._enter_state(inst, ag, target)
        self._record(
            inst,
            "decision",
            ag.agent,
            {
                "state": state.id,
                "kind": "pick",
                "choice": {"envelope": envelope.summary()},
                "to": target,
                "status": ag.status,
            },
        )

    # --- delivery ---------------------------------------------------------

    def deliver(self, envelope: Envelope) -> AgentState:
        with self._lock:
            inst = self._instances.get(envelope.instance)
            if inst is None:
                self.ensure_instance(envelope.process, envelope.instance)
                inst = self._instances[envelope.instance]
            if envelope.id in inst.seen:
                raise DuplicateEnvelope(envelope.id)
            to = envelope.to_agent
            if not inst.model.has_subject(to.subject):
                raise EngineError("UNKNOWN_SUBJECT", to.subject)
            subject = inst.model.subject(to.subject)
            if inst.model.behavior_or_none(to.subject) is None:
                raise EngineError("UNKNOWN_SUBJECT", f"{to.subject} has no local behavior")
            if to.index < 0 or to.index >= subject.max_instances:
                raise EngineError("BOUNDS", f"{to} outside 0..{subject.max_instances - 1}")
            created = False
            ag = inst.agents.get(to.key)
            if ag is None:
                ag = self._create_agent(inst, to.subject, to.index)
                created = True
            envelope.arrived_at = self.clock.now
            ag.pool.insert(envelope)  # raises PoolFull before the id is marked seen
            inst.seen.add(envelope.id)
            inst.known.add(envelope.from_agent.key)
            if ag.status == WAITING_MESSAGE and self._selectable(inst, ag):
                ag.status = WAITING_DECISION
            self._record(
                inst,
                "deliver",
                to,
                {
                    "envelope": envelope.summary() | {"payload": envelope.payload},
                    "pool": len(ag.pool.entries),
                    "status": ag.status,
                    "created": created,
                },
            )
            return ag

    # --- timers -----------------------------------------------------------

    def fire_due_timers(self) -> list[tuple[AgentId, str]]:
        fired: list[tuple[AgentId, str]] = []
        with self._lock:
            while True:
                due = [
                    (fire_at, iid, key, state_id)
                    for iid, inst in self._instances.items()
                    for key, (fire_at, state_id) in inst.timers.items()
                    if fire_at <= self.clock.now
                ]
                if not due:
                    return fired
                due.sort(key=lambda d: (d[0], d[1], d[2]))
                fire_at, iid, key, state_id = due[0]
                inst = self._instances[iid]
                ag = inst.agents[key]
                inst.timers.pop(key, None)
                behavior = inst.model.behavior(ag.agent.subject)
                timeout = behavior.timeout_of(state_id)
                if timeout is None or ag.current_state != state_id:
                    continue
                self._enter_state(inst, ag, timeout.to_state)
                self._record(
                    inst,
                    "timeout",
                    ag.agent,
                    {"state": state_id, "to": timeout.to_state, "status": ag.status},
                )
                fired.append((ag.agent, state_id))

    def advance_to(self, at_ms: int) -> list[tuple[AgentId, str]]:
        with self._lock:
            self.clock.advance_to(at_ms)
            return self.fire_due_timers()

    def pending_timers(self) -> list[tuple[int, str, str]]:
        with self._lock:
            return sorted(
                (fire_at, iid, f"{key[0]}#{key[1]}")
                for iid, inst in self._instances.items()
                for key, (fire_at, _state) in inst.timers.items()
            )

    # --- queries ----------------------------------------------------------

    def _instance(self, instance_id: str) -> _Instance:
        inst = self._instances.get(instance_id)
        if inst is None:
            raise EngineError("UNKNOWN_INSTANCE", instance_id)
        return inst

    def _selectable(self, inst: _Instance, ag: AgentState) -> bool:
        return bool(self._selectable_entries(inst, ag))

    def _selectable_entries(self, inst: _Instance, ag: AgentState) -> list[Envelope]:
        behavior = inst.model.behavior(ag.agent.subject)
        state = behavior.state(ag.current_state)
        if state.kind != M.RECEIVE:
            return []
        accepted = M.accepted_receives(state, behavior)
        return [e for e in ag.pool.entries if (e.message_type, e.from_agent.subject) in accepted]

    def selectable_messages(self, agent: AgentId) -> list[dict[str, Any]]:
        with self._lock:
            inst = self._instance(agent.instance)
            ag = inst.agents.get(agent.key)
            if ag is None:
                raise EngineError("UNKNOWN_AGENT", str(agent))
            behavior = inst.model.behavior(agent.subject)
            if behavior.state(ag.current_state).kind != M.RECEIVE:
                raise EngineError("NOT_RECEIVE", f"{agent} is not at a receive state")
            return [
                {
                    "id": e.id,
                    "type": e.message_type,
                    "from": str(e.from_agent),
                    "arrived_at": e.arrived_at,
                    "payload": e.payload,
                }
                for e in self._selectable_entries(inst, ag)
            ]

    def instance_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._instances)

    def instance_process(self, instance_id: str) -> str:
        with self._lock:
            return self._instance(instance_id).model.name

    def agents(self, instance_id: str) -> list[AgentState]:
        with self._lock:
            inst = self._instance(instance_id)
            return [inst.agents[k] for k in sorted(inst.agents)]

    def agent(self, agent_id: AgentId) -> AgentState:
        with self._lock:
            inst = self._instance(agent_id.instance)
            ag = inst.agents.get(agent_id.key)
            if ag is None:
                raise EngineError("UNKNOWN_AGENT", str(agent_id))
            return ag

    def statuses(self, instance_id: str) -> dict[str, str]:
        with self._lock:
            inst = self._instance(instance_id)
            return {f"{s}#{i}": inst.agents[(s, i)].status for (s, i) in sorted(inst.agents)}

    def residue(self, instance_id: str) -> dict[str, list[tuple[str, str]]]:
        """Unconsumed pool contents per agent, (message type, sender subject)."""
        with self._lock:
            inst = self._instance(instance_id)
            out: dict[str, list[tuple[str, str]]] = {}
            for key in sorted(inst.agents):
                ag = inst.agents[key]
                if ag.pool.entries:
                    out[f"{key[0]}#{key[1]}"] = sorted(
                        (e.message_type, e.from_agent.subject) for e in ag.pool.entries
                    )
            return out

    def trace_of(self, instance_id: str) -> list[dict[str, Any]]:
        with self._lock:
            return list(self._instance(instance_id).trace)

    def command_count(self, instance_id: str) -> int:
        with self._lock:
            return self._instance(instance_id).seq

    def consumed_ids(self, instance_id: str) -> set[str]:
        with self._lock:
            return set(self._instance(instance_id).consumed)

    def waiting_decision_agents(self, instance_id: str) -> list[AgentState]:
        with self._lock:
            inst = self._instance(instance_id)
            return [inst.agents[k] for k in sorted(inst.agents) if inst.agents[k].status == WAITING_DECISION]
