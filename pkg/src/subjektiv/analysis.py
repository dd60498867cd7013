"""Bounded exploration of the composed choreography state space.

Abstracts away payloads (branch decisions become nondeterministic), treats
time qualitatively (an armed timer may always fire) and instances of one
multi-subject as symmetric (fan-outs are enumerated by size over the lowest
indices). Within those bounds it finds global deadlocks - non-final states
with no enabled move - and terminal message leaks, and can emit a decider
script that replays any reported path on the real engine.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from typing import Any, Iterator

from . import model as M

# One agent: (subject, index, state_id, completed, pool) where pool is a
# sorted tuple of ((message_type, from_subject), count). A global state is
# the sorted tuple of agents; agents not yet created are simply absent.
Agent = tuple[str, int, str, bool, tuple]
GlobalState = tuple[Agent, ...]


@dataclass(frozen=True)
class ExploreBounds:
    max_instances: int = 4
    pool_bound: int = 8
    max_states: int = 1_000_000
    branch_policy: str = "all-branches"


@dataclass(frozen=True)
class Move:
    agent: tuple[str, int] | None
    kind: str  # branch | send | pick | timeout | env
    data: tuple

    def describe(self) -> str:
        name = f"{self.agent[0]}#{self.agent[1]}" if self.agent else "environment"
        return f"{name} {self.kind}{self.data}"


@dataclass
class ExploreResult:
    states: int
    transitions: int
    truncated: bool


@dataclass
class Deadlock:
    state: GlobalState
    path: list[Move]
    script: dict[str, Any]
    advance_plan: list[int]


@dataclass
class Leak:
    state: GlobalState
    residue: dict[str, list[tuple[str, str]]]


def encode_state(state: GlobalState) -> str:
    return json.dumps(state, sort_keys=True, separators=(",", ":"))


class _Space:
    def __init__(self, model: M.ProcessModel, bounds: ExploreBounds):
        report = M.validate(model)
        if not report.ok:
            raise M.ModelError("INVALID_MODEL", f"{len(report.errors)} validation errors")
        self.model = model
        self.bounds = bounds
        self.truncated = False

    # -- state helpers ----------------------------------------------------

    def cap(self, subject: M.SubjectDef) -> int:
        return min(subject.max_instances, self.bounds.max_instances)

    def initial(self, starters: dict[str, int]) -> GlobalState:
        agents: list[Agent] = []
        for subject in self.model.subjects:
            for index in range(starters.get(subject.name, 0)):
                agents.append(self._fresh_agent(subject.name, index))
        return tuple(sorted(agents))

    def _fresh_agent(self, subject: str, index: int) -> Agent:
        behavior = self.model.behavior(subject)
        start = behavior.start_states()[0]
        return (subject, index, start.id, start.is_end, ())

    def _with_agent(self, state: GlobalState, agent: Agent) -> GlobalState:
        rest = [a for a in state if (a[0], a[1]) != (agent[0], agent[1])]
        return tuple(sorted(rest + [agent]))

    def _find(self, state: GlobalState, key: tuple[str, int]) -> Agent | None:
        for a in state:
            if (a[0], a[1]) == key:
                return a
        return None

    def _moved(self, agent: Agent, to_state: str) -> Agent:
        behavior = self.model.behavior(agent[0])
        target = behavior.state(to_state)
        return (agent[0], agent[1], to_state, target.is_end, agent[4])

    def _pool_add(self, agent: Agent, entry: tuple[str, str]) -> Agent | None:
        pool = dict(agent[4])
        if sum(pool.values()) >= self.bounds.pool_bound:
            self.truncated = True
            return None
        pool[entry] = pool.get(entry, 0) + 1
        return (agent[0], agent[1], agent[2], agent[3], tuple(sorted(pool.items())))

    def _pool_remove(self, agent: Agent, entry: tuple[str, str]) -> Agent:
        pool = dict(agent[4])
        pool[entry] -= 1
        if pool[entry] == 0:
            del pool[entry]
        return (agent[0], agent[1], agent[2], agent[3], tuple(sorted(pool.items())))

    def _deposit(self, state: GlobalState, to_subject: str, index: int, entry: tuple[str, str]) -> GlobalState | None:
        target = self._find(state, (to_subject, index))
        if target is None:
            target = self._fresh_agent(to_subject, index)
            state = self._with_agent(state, target)
        grown = self._pool_add(target, entry)
        if grown is None:
            return None
        return self._with_agent(state, grown)

    # -- move enumeration --------------------------------------------------

    def moves(self, state: GlobalState) -> Iterator[tuple[Move, GlobalState | None]]:
        """Yield (move, successor); successor None = enabled but bound-cut."""
        for agent in state:
            if agent[3]:  # completed
                continue
            subject, index, state_id = agent[0], agent[1], agent[2]
            behavior = self.model.behavior(subject)
            current = behavior.state(state_id)
            if current.kind == M.FUNCTION:
                for t in behavior.outgoing(state_id):
                    if isinstance(t.trigger, M.Branch):
                        move = Move((subject, index), "branch", (state_id, t.trigger.label, t.to_state))
                        yield move, self._with_agent(state, self._moved(agent, t.to_state))
            elif current.kind == M.SEND:
                yield from self._send_moves(state, agent, behavior)
            else:
                yield from self._pick_moves(state, agent, behavior)
            timeout = behavior.timeout_of(state_id)
            if timeout is not None and current.kind != M.FUNCTION:
                move = Move((subject, index), "timeout", (state_id, timeout.to_state))
                yield move, self._with_agent(state, self._moved(agent, timeout.to_state))
        yield from self._env_moves(state)

    def _send_moves(self, state: GlobalState, agent: Agent, behavior: M.BehaviorDef):
        subject, index, state_id = agent[0], agent[1], agent[2]
        for t in behavior.outgoing(state_id):
            if not isinstance(t.trigger, M.Send):
                continue
            send = t.trigger
            target_def = self.model.subject(send.to_subject)
            cap = self.cap(target_def)
            if send.cardinality.kind == "one":
                target_sets = [(i,) for i in range(cap)]
            elif send.cardinality.kind == "all":
                existing = tuple(sorted(a[1] for a in state if a[0] == send.to_subject))
                target_sets = [existing] if existing else []
            else:
                lo, hi = send.cardinality.min, min(send.cardinality.max, cap)
                target_sets = [tuple(range(n)) for n in range(lo, hi + 1)]
            for targets in target_sets:
                move = Move(
                    (subject, index),
                    "send",
                    (state_id, send.message_type, send.to_subject, targets, t.to_state),
                )
                succ: GlobalState | None = self._with_agent(state, self._moved(agent, t.to_state))
                for target_index in targets:
                    succ = self._deposit(succ, send.to_subject, target_index, (send.message_type, subject))
                    if succ is None:
                        break
                yield move, succ

    def _pick_moves(self, state: GlobalState, agent: Agent, behavior: M.BehaviorDef):
        subject, index, state_id = agent[0], agent[1], agent[2]
        pool = dict(agent[4])
        for t in behavior.outgoing(state_id):
            if not isinstance(t.trigger, M.Receive):
                continue
            entry = (t.trigger.message_type, t.trigger.from_subject)
            if pool.get(entry, 0) > 0:
                move = Move((subject, index), "pick", (state_id, entry[0], entry[1], t.to_state))
                consumed = self._pool_remove(agent, entry)
                succ = self._with_agent(state, self._moved(consumed, t.to_state))
                yield move, succ

    def _env_moves(self, state: GlobalState):
        for channel in self.model.channels:
            sender = self.model.subject(channel.from_subject)
            if sender.kind != M.EXTERNAL:
                continue
            receiver = self.model.subject(channel.to_subject)
            if self.model.behavior_or_none(channel.to_subject) is None:
                continue
            for message_type in channel.message_types:
                for index in range(self.cap(receiver)):
                    move = Move(None, "env", (channel.from_subject, channel.to_subject, index, message_type))
                    succ = self._deposit(state, channel.to_subject, index, (message_type, channel.from_subject))
                    yield move, succ


def _explore(model: M.ProcessModel, starters: dict[str, int], bounds: ExploreBounds):
    space = _Space(model, bounds)
    initial = space.initial(starters)
    seen: dict[GlobalState, int] = {initial: 0}
    parents: dict[GlobalState, tuple[GlobalState, Move] | None] = {initial: None}
    order: list[GlobalState] = [initial]
    queue: deque[GlobalState] = deque([initial])
    transitions = 0
    while queue:
        state = queue.popleft()
        if len(seen) >= bounds.max_states:
            space.truncated = True
            break
        for move, succ in sorted(space.moves(state), key=lambda ms: (ms[0].agent or ("", -1), ms[0].kind, ms[0].data)):
            if succ is None:
                continue
            transitions += 1
            if succ not in seen:
                seen[succ] = len(seen)
                parents[succ] = (state, move)
                order.append(succ)
                queue.append(succ)
    return space, seen, parents, order, transitions


def explore(model: M.ProcessModel, starters: dict[str, int], bounds: ExploreBounds = ExploreBounds()) -> ExploreResult:
    space, seen, _parents, _order, transitions = _explore(model, starters, bounds)
    return ExploreResult(states=len(seen), transitions=transitions, truncated=space.truncated)


def _enabled_moves(space: _Space, state: GlobalState) -> list[Move]:
    return [m for m, _succ in space.moves(state)]


def _is_deadlock(space: _Space, state: GlobalState) -> bool:
    if not any(not a[3] for a in state):
        return False
    return not _enabled_moves(space, state)


def _path_to(parents, state: GlobalState) -> list[Move]:
    path: list[Move] = []
    cursor = state
    while parents[cursor] is not None:
        prev, move = parents[cursor]
        path.append(move)
        cursor = prev
    path.reverse()
    return path


def _max_timeout(model: M.ProcessModel) -> int:
    durations = [
        t.trigger.duration_ms
        for b in model.behaviors
        for t in b.transitions
        if isinstance(t.trigger, M.Timeout)
    ]
    return max(durations, default=0)


def replay_script(model: M.ProcessModel, starters: dict[str, int], path: list[Move]) -> tuple[dict[str, Any], list[int]]:
    """Turn an abstract move path into an occurrence-keyed decider script."""
    occurrences: dict[tuple[str, int], dict[str, int]] = {}

    def enter(key: tuple[str, int], state_id: str) -> int:
        per = occurrences.setdefault(key, {})
        per[state_id] = per.get(state_id, 0) + 1
        return per[state_id]

    for subject in model.subjects:
        for index in range(starters.get(subject.name, 0)):
            enter((subject.name, index), model.behavior(subject.name).start_states()[0].id)

    created = {
        (subject.name, index)
        for subject in model.subjects
        for index in range(starters.get(subject.name, 0))
    }
    rules: list[dict[str, Any]] = []
    advances = 0
    step = _max_timeout(model) + 1

    def ensure_created(subject: str, index: int) -> None:
        if (subject, index) not in created:
            created.add((subject, index))
            enter((subject, index), model.behavior(subject).start_states()[0].id)

    for move in path:
        if move.kind == "env":
            continue
        key = move.agent
        if move.kind == "branch":
            state_id, label, to_state = move.data
            occ = occurrences.get(key, {}).get(state_id, 1)
            rules.append(_rule(key, state_id, occ, {"branch": label}))
            enter(key, to_state)
        elif move.kind == "send":
            state_id, message_type, to_subject, targets, to_state = move.data
            occ = occurrences.get(key, {}).get(state_id, 1)
            rules.append(
                _rule(key, state_id, occ, {"send": {"type": message_type, "to": to_subject, "targets": list(targets)}})
            )
            enter(key, to_state)
            for target_index in targets:
                ensure_created(to_subject, target_index)
        elif move.kind == "pick":
            state_id, message_type, from_subject, to_state = move.data
            occ = occurrences.get(key, {}).get(state_id, 1)
            rules.append(_rule(key, state_id, occ, {"pick": {"type": message_type, "from": from_subject}}))
            enter(key, to_state)
        elif move.kind == "timeout":
            advances += 1
            _state_id, to_state = move.data
            enter(key, to_state)
    plan = [step * (i + 1) for i in range(advances)]
    return {"rules": rules, "default": None}, plan


def _rule(key: tuple[str, int], state_id: str, occurrence: int, choice: dict[str, Any]) -> dict[str, Any]:
    return {
        "subject": key[0],
        "index": key[1],
        "state": state_id,
        "occurrence": occurrence,
        "choice": choice,
    }


def find_deadlocks(
    model: M.ProcessModel, starters: dict[str, int], bounds: ExploreBounds = ExploreBounds()
) -> list[Deadlock]:
    space, seen, parents, order, _transitions = _explore(model, starters, bounds)
    found: list[Deadlock] = []
    for state in order:
        if _is_deadlock(space, state):
            path = _path_to(parents, state)
            script, plan = replay_script(model, starters, path)
            found.append(Deadlock(state=state, path=path, script=script, advance_plan=plan))
    found.sort(key=lambda d: encode_state(d.state))
    return found


def find_message_leaks(
    model: M.ProcessModel, starters: dict[str, int], bounds: ExploreBounds = ExploreBounds()
) -> list[Leak]:
    space, seen, _parents, order, _transitions = _explore(model, starters, bounds)
    leaks: list[Leak] = []
    for state in order:
        if _enabled_moves(space, state):
            continue
        if any(not a[3] for a in state):
            continue  # deadlock, reported separately
        residue = {
            f"{a[0]}#{a[1]}": sorted(entry for entry, count in a[4] for _ in range(count))
            for a in state
            if a[4]
        }
        if residue:
            leaks.append(Leak(state=state, residue=residue))
    leaks.sort(key=lambda l: encode_state(l.state))
    return leaks


def abstract_of_run(model: M.ProcessModel, agent_states: dict[str, str], statuses: dict[str, str], residue: dict[str, list[tuple[str, str]]]) -> GlobalState:
    """Project an engine run's final snapshot into the analyzer's state space."""
    agents: list[Agent] = []
    for name, state_id in agent_states.items():
        subject, _, index = name.rpartition("#")
        pool: dict[tuple[str, str], int] = {}
        for message_type, sender in residue.get(name, []):
            pool[(message_type, sender)] = pool.get((message_type, sender), 0) + 1
        agents.append(
            (subject, int(index), state_id, statuses[name] == "completed", tuple(sorted(pool.items())))
        )
    return tuple(sorted(agents))
