"""Tasks: pending decisions surfaced to humans or scripts.

Every engine transition that needs a choice flows through exactly one Task.
The service keeps the task list in lockstep with the engine (one open task
per agent awaiting a decision) and is the only caller of apply_decision.
"""

from __future__ import annotations

import random
import threading
from dataclasses import dataclass, field
from typing import Any

from . import model as M
from .bus import Router
from .clock import VirtualClock
from .engine import AgentId, Decision, Engine, EngineError, StaleDecision

OPEN = "open"
COMPLETED = "completed"
CANCELLED = "cancelled"

BRANCH = "branch"
SEND_TARGETS = "send_targets"
PICK_MESSAGE = "pick_message"

_KIND_BY_STATE = {M.FUNCTION: BRANCH, M.SEND: SEND_TARGETS, M.RECEIVE: PICK_MESSAGE}

# engine rejections that mean "your choice was not among the options"
_CHOICE_ERRORS = {
    "NO_SUCH_BRANCH",
    "NO_SUCH_ARM",
    "AMBIGUOUS_ARM",
    "NO_SUCH_MESSAGE",
    "NOT_ACCEPTABLE",
    "FANOUT_BOUNDS",
    "BOUNDS",
    "NO_TARGETS",
    "BAD_PAYLOAD",
}


class TaskError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


class NonQuiescent(Exception):
    """A scripted run exceeded its command cap without settling."""


@dataclass
class Task:
    id: str
    agent: AgentId
    state: str
    kind: str
    occurrence: int
    created_at: int
    serial: int
    status: str = OPEN


class TaskService:
    def __init__(self, engine: Engine, router: Router | None = None):
        self.engine = engine
        self.router = router or Router(engine)
        self._tasks: dict[str, Task] = {}
        self._serial = 0
        self._lock = threading.RLock()

    # --- lifecycle --------------------------------------------------------

    def start(self, process: str, starters: dict[str, int], instance_id: str | None = None) -> str:
        with self._lock:
            iid = self.engine.instantiate(process, starters, instance_id)
            self.sync()
            return iid

    def sync(self) -> None:
        """Reconcile tasks with engine state: open for deciders, cancel stale."""
        with self._lock:
            live: set[tuple[tuple[str, int], str, str, int]] = set()
            for iid in self.engine.instance_ids():
                for ag in self.engine.waiting_decision_agents(iid):
                    live.add((ag.agent.key, iid, ag.current_state, ag.occurrence()))
            for task in self._tasks.values():
                if task.status != OPEN:
                    continue
                key = (task.agent.key, task.agent.instance, task.state, task.occurrence)
                if key in live:
                    live.discard(key)
                else:
                    task.status = CANCELLED
            for (agent_key, iid, state, occurrence) in sorted(live):
                ag = self.engine.agent(AgentId(iid, agent_key[0], agent_key[1]))
                behavior = self.engine.process_model(self.engine.instance_process(iid)).behavior(agent_key[0])
                self._serial += 1
                task = Task(
                    id=self.engine.ids.next(),
                    agent=ag.agent,
                    state=state,
                    kind=_KIND_BY_STATE[behavior.state(state).kind],
                    occurrence=occurrence,
                    created_at=self.engine.clock.now,
                    serial=self._serial,
                )
                self._tasks[task.id] = task

    # --- queries ----------------------------------------------------------

    def open_tasks(
        self,
        subject: str | None = None,
        instance: str | None = None,
        company: str | None = None,
    ) -> list[Task]:
        with self._lock:
            tasks = [t for t in self._tasks.values() if t.status == OPEN]
            if subject is not None:
                tasks = [t for t in tasks if t.agent.subject == subject]
            if instance is not None:
                tasks = [t for t in tasks if t.agent.instance == instance]
            if company is not None:
                tasks = [
                    t
                    for t in tasks
                    if self._model_for(t).subject(t.agent.subject).company == company
                ]
            return sorted(tasks, key=lambda t: (t.created_at, t.serial))

    def get(self, task_id: str) -> Task:
        with self._lock:
            task = self._tasks.get(task_id)
            if task is None:
                raise TaskError("UNKNOWN_TASK", task_id)
            return task

    def _model_for(self, task: Task) -> M.ProcessModel:
        return self.engine.process_model(self.engine.instance_process(task.agent.instance))

    def options(self, task: Task) -> dict[str, Any]:
        """Kind-specific live options: what a UI renders, what complete accepts."""
        model = self._model_for(task)
        behavior = model.behavior(task.agent.subject)
        if task.kind == BRANCH:
            labels = [
                t.trigger.label
                for t in behavior.outgoing(task.state)
                if isinstance(t.trigger, M.Branch)
            ]
            return {"labels": labels}
        if task.kind == SEND_TARGETS:
            arms = []
            for t in behavior.outgoing(task.state):
                if not isinstance(t.trigger, M.Send):
                    continue
                send = t.trigger
                target = model.subject(send.to_subject)
                arms.append(
                    {
                        "type": send.message_type,
                        "to": send.to_subject,
                        "cardinality": {
                            "kind": send.cardinality.kind,
                            "min": send.cardinality.min,
                            "max": send.cardinality.max,
                        },
                        "max_instances": target.max_instances,
                        "schema": model.message_type(send.message_type).schema_dict(),
                    }
                )
            return {"arms": arms}
        return {"messages": self.engine.selectable_messages(task.agent)}

    def describe(self, task: Task) -> dict[str, Any]:
        model = self._model_for(task)
        state = model.behavior(task.agent.subject).state(task.state)
        return {
            "id": task.id,
            "instance": task.agent.instance,
            "subject": task.agent.subject,
            "index": task.agent.index,
            "agent": str(task.agent),
            "state": task.state,
            "label": state.label,
            "kind": task.kind,
            "occurrence": task.occurrence,
            "created_at": task.created_at,
            "status": task.status,
            "options": self.options(task) if task.status == OPEN else {},
        }

    # --- completion -------------------------------------------------------

    def complete(self, task_id: str, choice: dict[str, Any]) -> dict[str, Any]:
        with self._lock:
            task = self.get(task_id)
            if task.status != OPEN:
                raise TaskError("STALE_TASK", f"task {task_id} is {task.status}")
            try:
                ag = self.engine.agent(task.agent)
            except EngineError as exc:
                task.status = CANCELLED
                raise TaskError("STALE_TASK", str(exc)) from exc
            if ag.current_state != task.state or ag.occurrence() != task.occurrence:
                task.status = CANCELLED
                raise TaskError("STALE_TASK", f"{task.agent} already moved on")
            decision = self._decision_for(task, choice)
            try:
                _, emitted = self.engine.apply_decision(decision)
            except StaleDecision as exc:
                task.status = CANCELLED
                raise TaskError("STALE_TASK", str(exc)) from exc
            except EngineError as exc:
                if exc.code in _CHOICE_ERRORS:
                    raise TaskError("INVALID_CHOICE", str(exc)) from exc
                raise
            task.status = COMPLETED
            outcomes = [self.router.route(e) for e in emitted]
            self.sync()
            return {"task": task.id, "emitted": len(emitted), "outcomes": outcomes}

    def _decision_for(self, task: Task, choice: dict[str, Any]) -> Decision:
        if not isinstance(choice, dict):
            raise TaskError("INVALID_CHOICE", "choice must be an object")
        if task.kind == BRANCH:
            label = choice.get("branch")
            labels = self.options(task)["labels"]
            if label not in labels:
                raise TaskError("INVALID_CHOICE", f"branch {label!r} not in {labels}")
            return Decision(task.agent, task.state, branch=label, payload=choice.get("payload"))
        if task.kind == SEND_TARGETS:
            send = choice.get("send", {})
            if not isinstance(send, dict):
                raise TaskError("INVALID_CHOICE", "send choice must be an object")
            targets = send.get("targets")
            if targets is None and "count" in send:
                targets = list(range(int(send["count"])))
            return Decision(
                task.agent,
                task.state,
                message_type=send.get("type"),
                to_subject=send.get("to"),
                targets=targets,
                payload=send.get("payload"),
            )
        envelope_id = self._resolve_pick(task, choice)
        return Decision(task.agent, task.state, envelope_id=envelope_id)

    def _resolve_pick(self, task: Task, choice: dict[str, Any]) -> str:
        if "envelope" in choice:
            return str(choice["envelope"])
        messages = self.engine.selectable_messages(task.agent)
        if not messages:
            raise TaskError("INVALID_CHOICE", "no selectable messages")
        pick = choice.get("pick", "earliest")
        if pick == "earliest":
            return messages[0]["id"]
        if pick == "latest":
            return messages[-1]["id"]
        if isinstance(pick, dict):
            for msg in messages:
                if _pick_matches(msg, pick):
                    return msg["id"]
            raise TaskError("INVALID_CHOICE", f"no selectable message matches {pick}")
        raise TaskError("INVALID_CHOICE", f"bad pick {pick!r}")


def _pick_matches(msg: dict[str, Any], pick: dict[str, Any]) -> bool:
    """Selector like {"type": "Offer"} or {"from": "SupplierA"}; the `from`
    key matches either the full agent name or just the subject."""
    for k, v in pick.items():
        if k == "from":
            if v != msg["from"] and v != msg["from"].rpartition("#")[0]:
                return False
        elif msg.get(k) != v:
            return False
    return True


# --- deciders --------------------------------------------------------------


@dataclass(frozen=True)
class Rule:
    subject: str
    state: str = "any"
    occurrence: int | str = "any"
    index: int | str = "any"
    choice: dict[str, Any] = field(default_factory=dict)

    def matches(self, task: Task) -> bool:
        return (
            self.subject == task.agent.subject
            and self.state in ("any", task.state)
            and self.occurrence in ("any", task.occurrence)
            and self.index in ("any", task.agent.index)
        )


@dataclass
class DeciderScript:
    """Deterministic stand-in for the human user; first matching rule wins."""

    rules: list[Rule] = field(default_factory=list)
    default: str | None = None  # "earliest" | "first-branch" | None

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "DeciderScript":
        rules = [
            Rule(
                subject=r["subject"],
                state=r.get("state", "any"),
                occurrence=r.get("occurrence", "any"),
                index=r.get("index", "any"),
                choice=r["choice"],
            )
            for r in obj.get("rules", [])
        ]
        return cls(rules=rules, default=obj.get("default"))

    def to_dict(self) -> dict[str, Any]:
        return {
            "rules": [
                {
                    "subject": r.subject,
                    "state": r.state,
                    "occurrence": r.occurrence,
                    "index": r.index,
                    "choice": r.choice,
                }
                for r in self.rules
            ],
            "default": self.default,
        }

    def choice_for(self, task: Task, service: TaskService) -> dict[str, Any] | None:
        for rule in self.rules:
            if rule.matches(task):
                return rule.choice
        if self.default in ("earliest", "first-branch"):
            return default_choice(task, service)
        return None


def default_choice(task: Task, service: TaskService) -> dict[str, Any]:
    if task.kind == BRANCH:
        return {"branch": service.options(task)["labels"][0]}
    if task.kind == SEND_TARGETS:
        return {"send": {}}
    return {"pick": "earliest"}


class RandomDecider:
    """Uniformly random legal choices; seeded for reproducibility."""

    def __init__(self, seed: int):
        self.rng = random.Random(seed)

    def choice_for(self, task: Task, service: TaskService) -> dict[str, Any]:
        options = service.options(task)
        if task.kind == BRANCH:
            return {"branch": self.rng.choice(options["labels"])}
        if task.kind == SEND_TARGETS:
            arm = self.rng.choice(options["arms"])
            card = arm["cardinality"]
            cap = arm["max_instances"]
            if card["kind"] == "choose":
                n = self.rng.randint(card["min"], min(card["max"], cap))
                targets = sorted(self.rng.sample(range(cap), n))
            elif card["kind"] == "all":
                targets = None
            else:
                targets = [self.rng.randrange(cap)]
            send: dict[str, Any] = {"type": arm["type"], "to": arm["to"]}
            if targets is not None:
                send["targets"] = targets
            return {"send": send}
        messages = options["messages"]
        return {"envelope": self.rng.choice(messages)["id"]}


# --- scripted execution -----------------------------------------------------


@dataclass
class RunResult:
    instance: str
    trace: list[dict[str, Any]]
    statuses: dict[str, str]
    agent_states: dict[str, str]
    residue: dict[str, list[tuple[str, str]]]
    open_tasks: list[dict[str, Any]]
    pending_timers: int
    quiescent: bool
    commands: int


def run_scripted(
    process: M.ProcessModel,
    starters: dict[str, int],
    decider,
    advance_plan: list[int] | tuple[int, ...] = (),
    command_cap: int = 10_000,
    pool_capacity: int = 64,
) -> RunResult:
    """Run one instance to quiescence under a virtual clock.

    Repeatedly: complete every open task the decider resolves (skip leaves
    a task open), pump due retries, fire due timers, then advance the clock
    to the next plan point. Raises NonQuiescent past the command cap.
    """
    engine = Engine(clock=VirtualClock(), pool_capacity=pool_capacity)
    engine.register(process)
    service = TaskService(engine)
    iid = service.start(process.name, starters)
    plan = sorted(advance_plan)

    while True:
        if engine.command_count(iid) > command_cap:
            raise NonQuiescent(f"no quiescence after {command_cap} commands")
        task = _next_completable(service, decider)
        if task is not None:
            choice = decider.choice_for(task, service)
            service.complete(task.id, choice)  # failed routes sit in the retry queue
            continue
        due = service.router.next_due()
        if due is not None and due <= engine.clock.now:
            service.router.pump()
            service.sync()
            continue
        timers = engine.pending_timers()
        if timers and timers[0][0] <= engine.clock.now:
            engine.fire_due_timers()
            service.sync()
            continue
        if plan:
            engine.clock.advance_to(plan.pop(0))
            engine.fire_due_timers()
            service.router.pump()
            service.sync()
            continue
        break

    open_tasks = [service.describe(t) for t in service.open_tasks()]
    timers = engine.pending_timers()
    return RunResult(
        instance=iid,
        trace=engine.trace_of(iid),
        statuses=engine.statuses(iid),
        agent_states={str(ag.agent): ag.current_state for ag in engine.agents(iid)},
        residue=engine.residue(iid),
        open_tasks=open_tasks,
        pending_timers=len(timers),
        quiescent=not open_tasks and not timers and not service.router.pending,
        commands=engine.command_count(iid),
    )


def _next_completable(service: TaskService, decider) -> Task | None:
    for task in service.open_tasks():
        choice = decider.choice_for(task, service)
        if choice is None:
            raise TaskError("UNMATCHED_DECISION", f"no rule for {task.agent} at {task.state} (occurrence {task.occurrence})")
        if choice.get("skip"):
            continue
        return task
    return None
