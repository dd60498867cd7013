"""Typed in-memory representation of subject-oriented process models.

A process model has two layers: the interaction layer (subjects and the
unidirectional channels between them) and one behavior diagram per internal
subject (a state machine of function/send/receive states). Instances are
immutable after construction; `validate` reports every structural rule
violation as data rather than raising.
"""

from __future__ import annotations

from dataclasses import dataclass, field

FIELD_TYPES = ("text", "int", "dec", "bool")

SINGLE = "single"
MULTI = "multi"
EXTERNAL = "external"

FUNCTION = "function"
SEND = "send"
RECEIVE = "receive"

DEFAULT_COMPANY = "default"


@dataclass(frozen=True)
class MessageTypeDef:
    """A named message type with a flat record schema."""

    name: str
    payload_schema: tuple[tuple[str, str], ...] = ()

    def schema_dict(self) -> dict[str, str]:
        return dict(self.payload_schema)


@dataclass(frozen=True)
class SubjectDef:
    name: str
    kind: str = SINGLE
    max_instances: int = 1
    company: str = DEFAULT_COMPANY


@dataclass(frozen=True)
class ChannelDef:
    """One-way message path; a bidirectional exchange needs two channels."""

    from_subject: str
    to_subject: str
    message_types: tuple[str, ...]


@dataclass(frozen=True)
class Cardinality:
    """Fan-out rule for a send arm targeting a multi-subject."""

    kind: str = "one"  # one | all | choose
    min: int = 1
    max: int = 1


CARD_ONE = Cardinality("one", 1, 1)
CARD_ALL = Cardinality("all", 1, 1)


@dataclass(frozen=True)
class Branch:
    label: str


@dataclass(frozen=True)
class Send:
    message_type: str
    to_subject: str
    cardinality: Cardinality = CARD_ONE


@dataclass(frozen=True)
class Receive:
    message_type: str
    from_subject: str


@dataclass(frozen=True)
class Timeout:
    duration_ms: int


Trigger = Branch | Send | Receive | Timeout


@dataclass(frozen=True)
class TransitionDef:
    from_state: str
    to_state: str
    trigger: Trigger


@dataclass(frozen=True)
class StateDef:
    id: str
    label: str
    kind: str
    is_start: bool = False
    is_end: bool = False


@dataclass(frozen=True)
class BehaviorDef:
    subject: str
    states: tuple[StateDef, ...]
    transitions: tuple[TransitionDef, ...]

    def state(self, state_id: str) -> StateDef:
        for s in self.states:
            if s.id == state_id:
                return s
        raise KeyError(state_id)

    def has_state(self, state_id: str) -> bool:
        return any(s.id == state_id for s in self.states)

    def outgoing(self, state_id: str) -> tuple[TransitionDef, ...]:
        return tuple(t for t in self.transitions if t.from_state == state_id)

    def timeout_of(self, state_id: str) -> TransitionDef | None:
        for t in self.outgoing(state_id):
            if isinstance(t.trigger, Timeout):
                return t
        return None

    def start_states(self) -> tuple[StateDef, ...]:
        return tuple(s for s in self.states if s.is_start)


@dataclass(frozen=True)
class ProcessModel:
    name: str
    subjects: tuple[SubjectDef, ...] = ()
    message_types: tuple[MessageTypeDef, ...] = ()
    channels: tuple[ChannelDef, ...] = ()
    behaviors: tuple[BehaviorDef, ...] = ()

    def subject(self, name: str) -> SubjectDef:
        for s in self.subjects:
            if s.name == name:
                return s
        raise KeyError(name)

    def has_subject(self, name: str) -> bool:
        return any(s.name == name for s in self.subjects)

    def message_type(self, name: str) -> MessageTypeDef:
        for m in self.message_types:
            if m.name == name:
                return m
        raise KeyError(name)

    def has_message_type(self, name: str) -> bool:
        return any(m.name == name for m in self.message_types)

    def behavior(self, subject: str) -> BehaviorDef:
        for b in self.behaviors:
            if b.subject == subject:
                return b
        raise KeyError(subject)

    def behavior_or_none(self, subject: str) -> BehaviorDef | None:
        for b in self.behaviors:
            if b.subject == subject:
                return b
        return None

    def channel_allows(self, from_subject: str, to_subject: str, message_type: str) -> bool:
        return any(
            c.from_subject == from_subject
            and c.to_subject == to_subject
            and message_type in c.message_types
            for c in self.channels
        )


@dataclass(frozen=True)
class Violation:
    rule: str
    location: str
    message: str
    severity: str = "error"  # error | warning


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    def add(self, rule: str, location: str, message: str, severity: str = "error") -> None:
        self.violations.append(Violation(rule, location, message, severity))

    @property
    def errors(self) -> list[Violation]:
        return [v for v in self.violations if v.severity == "error"]

    @property
    def warnings(self) -> list[Violation]:
        return [v for v in self.violations if v.severity == "warning"]

    @property
    def ok(self) -> bool:
        """True when the model is runnable (no error-severity violations)."""
        return not self.errors

    def empty(self) -> bool:
        return not self.violations

    def __len__(self) -> int:
        return len(self.violations)

    def rules(self) -> set[str]:
        return {v.rule for v in self.violations}


class ModelError(Exception):
    """Raised when an operation is applied to a model that fails validation."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


def _check_subjects(model: ProcessModel, report: ValidationReport) -> None:
    seen: set[str] = set()
    for s in model.subjects:
        loc = f"subject {s.name}"
        if s.name in seen:
            report.add("DUPLICATE_SUBJECT", loc, "subject declared twice")
        seen.add(s.name)
        if s.kind not in (SINGLE, MULTI, EXTERNAL):
            report.add("BAD_SUBJECT_KIND", loc, f"unknown kind {s.kind!r}")
            continue
        if s.kind == MULTI and s.max_instances < 2:
            report.add("MULTI_BOUNDS", loc, "multi-subject needs max_instances >= 2")
        if s.kind in (SINGLE, EXTERNAL) and s.max_instances != 1:
            report.add("MULTI_BOUNDS", loc, f"{s.kind} subject must have max_instances = 1")


def _check_messages(model: ProcessModel, report: ValidationReport) -> None:
    seen: set[str] = set()
    for m in model.message_types:
        loc = f"message {m.name}"
        if m.name in seen:
            report.add("DUPLICATE_MESSAGE_TYPE", loc, "message type declared twice")
        seen.add(m.name)
        fields: set[str] = set()
        for fname, ftype in m.payload_schema:
            if fname in fields:
                report.add("DUPLICATE_FIELD", loc, f"payload field {fname!r} declared twice")
            fields.add(fname)
            if ftype not in FIELD_TYPES:
                report.add("BAD_FIELD_TYPE", loc, f"field {fname!r} has unknown type {ftype!r}")


def _check_channels(model: ProcessModel, report: ValidationReport) -> None:
    for c in model.channels:
        loc = f"channel {c.from_subject} -> {c.to_subject}"
        if not c.message_types:
            report.add("CHANNEL_EMPTY", loc, "channel carries no message types")
        for endpoint in (c.from_subject, c.to_subject):
            if not model.has_subject(endpoint):
                report.add("CHANNEL_UNKNOWN_SUBJECT", loc, f"undeclared subject {endpoint!r}")
        for mt in c.message_types:
            if not model.has_message_type(mt):
                report.add("CHANNEL_UNKNOWN_MESSAGE", loc, f"undeclared message type {mt!r}")


def _check_behavior_arms(model: ProcessModel, b: BehaviorDef, s: StateDef, report: ValidationReport) -> None:
    loc = f"behavior {b.subject}, state {s.id}"
    arms = [t for t in b.outgoing(s.id) if not isinstance(t.trigger, Timeout)]
    timeouts = [t for t in b.outgoing(s.id) if isinstance(t.trigger, Timeout)]

    if timeouts and s.kind == FUNCTION:
        report.add("TIMEOUT_ON_FUNCTION", loc, "timeout transitions belong on send/receive states")
    if len(timeouts) > 1:
        report.add("DUPLICATE_TIMEOUT", loc, "at most one timeout transition per state")
    for t in timeouts:
        if t.trigger.duration_ms <= 0:
            report.add("BAD_TIMEOUT", loc, "timeout duration must be positive")

    expected = {FUNCTION: Branch, SEND: Send, RECEIVE: Receive}[s.kind]
    for t in arms:
        if not isinstance(t.trigger, expected):
            report.add(
                "TRIGGER_MISMATCH",
                loc,
                f"{s.kind} state cannot take a {type(t.trigger).__name__.lower()} transition",
            )

    if s.kind == SEND:
        for t in arms:
            if not isinstance(t.trigger, Send):
                continue
            tr = t.trigger
            if not model.has_message_type(tr.message_type):
                report.add("UNKNOWN_MESSAGE_TYPE", loc, f"undeclared message type {tr.message_type!r}")
            elif not model.channel_allows(b.subject, tr.to_subject, tr.message_type):
                report.add(
                    "SEND_NO_CHANNEL",
                    loc,
                    f"no channel {b.subject} -> {tr.to_subject} carrying {tr.message_type}",
                )
            card = tr.cardinality
            if card.kind == "choose" and not 1 <= card.min <= card.max:
                report.add("CARDINALITY_BOUNDS", loc, f"choose({card.min},{card.max}) is not a valid range")
            if card.kind != "one" and model.has_subject(tr.to_subject):
                if model.subject(tr.to_subject).kind != MULTI:
                    report.add(
                        "CARDINALITY_NOT_MULTI",
                        loc,
                        f"fan-out cardinality targets single subject {tr.to_subject!r}",
                    )

    if s.kind == RECEIVE:
        for t in arms:
            if not isinstance(t.trigger, Receive):
                continue
            tr = t.trigger
            if not model.has_message_type(tr.message_type):
                report.add("UNKNOWN_MESSAGE_TYPE", loc, f"undeclared message type {tr.message_type!r}")
            elif not model.channel_allows(tr.from_subject, b.subject, tr.message_type):
                report.add(
                    "RECEIVE_NO_CHANNEL",
                    loc,
                    f"no channel {tr.from_subject} -> {b.subject} carrying {tr.message_type}",
                )
        if not arms and timeouts:
            report.add("EMPTY_RECEIVE", loc, "receive state accepts no messages (timeout only)", "warning")
        # Same message type from different senders converging on one successor:
        # permitted, but almost always a modeling accident worth flagging.
        by_type: dict[str, list[tuple[str, str]]] = {}
        for t in arms:
            if isinstance(t.trigger, Receive):
                by_type.setdefault(t.trigger.message_type, []).append((t.trigger.from_subject, t.to_state))
        for mt, pairs in by_type.items():
            senders = {p[0] for p in pairs}
            successors = {p[1] for p in pairs}
            if len(senders) > 1 and len(successors) < len(pairs):
                report.add(
                    "AMBIGUOUS_RECEIVE",
                    loc,
                    f"message {mt} from {sorted(senders)} shares a successor state",
                    "warning",
                )


def _check_behavior(model: ProcessModel, b: BehaviorDef, report: ValidationReport) -> None:
    loc = f"behavior {b.subject}"
    ids: set[str] = set()
    for s in b.states:
        if s.id in ids:
            report.add("DUPLICATE_STATE", f"{loc}, state {s.id}", "state id declared twice")
        ids.add(s.id)

    if not any(s.is_start for s in b.states):
        report.add("NO_START_STATE", loc, "behavior has no start state")
    if not any(s.is_end for s in b.states):
        report.add("NO_END_STATE", loc, "behavior has no end state")

    for t in b.transitions:
        for ref in (t.from_state, t.to_state):
            if ref not in ids:
                report.add("UNKNOWN_STATE", loc, f"transition references undeclared state {ref!r}")

    for s in b.states:
        out = b.outgoing(s.id)
        if s.is_end and out:
            report.add("END_HAS_OUTGOING", f"{loc}, state {s.id}", "end state must have no outgoing transitions")
        if not s.is_end and not out:
            report.add("NO_OUTGOING", f"{loc}, state {s.id}", "non-end state needs an outgoing transition")
        if s.kind not in (FUNCTION, SEND, RECEIVE):
            report.add("BAD_STATE_KIND", f"{loc}, state {s.id}", f"unknown state kind {s.kind!r}")
            continue
        _check_behavior_arms(model, b, s, report)

    reachable = reachable_states(b)
    for s in b.states:
        if s.id not in reachable:
            report.add("UNREACHABLE_STATE", f"{loc}, state {s.id}", "state unreachable from any start state", "warning")


def validate(model: ProcessModel) -> ValidationReport:
    """Check every structural invariant; violations are data, never raised."""
    report = ValidationReport()
    _check_subjects(model, report)
    _check_messages(model, report)
    _check_channels(model, report)

    behavior_subjects: set[str] = set()
    for b in model.behaviors:
        if b.subject in behavior_subjects:
            report.add("DUPLICATE_BEHAVIOR", f"behavior {b.subject}", "subject has two behaviors")
        behavior_subjects.add(b.subject)
        if not model.has_subject(b.subject):
            report.add("BEHAVIOR_UNKNOWN_SUBJECT", f"behavior {b.subject}", "behavior for undeclared subject")
        elif model.subject(b.subject).kind == EXTERNAL:
            report.add("EXTERNAL_BEHAVIOR", f"behavior {b.subject}", "external subjects carry no behavior")

    for s in model.subjects:
        if s.kind != EXTERNAL and s.name not in behavior_subjects:
            report.add("BEHAVIOR_MISSING", f"subject {s.name}", "internal subject has no behavior")

    for b in model.behaviors:
        _check_behavior(model, b, report)
    return report


def reachable_states(behavior: BehaviorDef) -> set[str]:
    """State ids reachable from any start state over the transition graph."""
    frontier = [s.id for s in behavior.states if s.is_start]
    seen: set[str] = set()
    while frontier:
        sid = frontier.pop()
        if sid in seen:
            continue
        seen.add(sid)
        for t in behavior.transitions:
            if t.from_state == sid and behavior.has_state(t.to_state):
                frontier.append(t.to_state)
    return seen


def accepted_receives(state: StateDef, behavior: BehaviorDef) -> set[tuple[str, str]]:
    """The (message type, sender) pairs a receive state will take."""
    if state.kind != RECEIVE:
        raise ModelError("NOT_RECEIVE", f"state {state.id} is a {state.kind} state")
    return {
        (t.trigger.message_type, t.trigger.from_subject)
        for t in behavior.outgoing(state.id)
        if isinstance(t.trigger, Receive)
    }


def composed_alphabet(model: ProcessModel) -> list[tuple[str, str, str]]:
    """Every (from, to, message type) triple the channels permit, sorted."""
    report = validate(model)
    if not report.ok:
        raise ModelError("INVALID_MODEL", f"{len(report.errors)} validation errors")
    triples = {
        (c.from_subject, c.to_subject, mt)
        for c in model.channels
        for mt in c.message_types
    }
    return sorted(triples)
