"""Textual process-definition language: parse `.sbpm` source, serialize back.

The concrete syntax is line-oriented only for humans; whitespace is
insignificant and `#` starts a comment. `serialize` emits the canonical
form (fixed ordering, 2-space indentation, shortest duration unit), which
is a fixpoint: parse(serialize(m)) equals m and re-serializing is
byte-stable.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import model as M

KEYWORDS = frozenset(
    """process subject multi external message channel behavior
       start end do send recv on msg to from one all choose timeout
       text int dec bool""".split()
)

PUNCT = ("->", "{", "}", "(", ")", ":", ",", "@")

_UNIT_MS = {"ms": 1, "s": 1000, "m": 60_000}


@dataclass(frozen=True)
class SourceSpan:
    line: int
    column: int
    length: int


class PdlSyntaxError(Exception):
    """First point at which the source stops matching the grammar."""

    def __init__(self, span: SourceSpan, expected: str, found: str, offset: int):
        super().__init__(f"{span.line}:{span.column}: expected {expected}, found {found}")
        self.span = span
        self.expected = expected
        self.found = found
        self.offset = offset


@dataclass(frozen=True)
class Token:
    kind: str  # kw | ident | int | string | duration | punct | eof
    value: str
    line: int
    column: int
    offset: int
    length: int

    def span(self) -> SourceSpan:
        return SourceSpan(self.line, self.column, self.length)

    def describe(self) -> str:
        if self.kind == "eof":
            return "end of input"
        if self.kind == "string":
            return "string"
        return repr(self.value)


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    i, line, col = 0, 1, 1
    n = len(source)

    def err(expected: str, found: str, at: int, ln: int, cl: int, length: int = 1):
        raise PdlSyntaxError(SourceSpan(ln, cl, length), expected, found, at)

    while i < n:
        c = source[i]
        if c == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if c == "#":
            while i < n and source[i] != "\n":
                i += 1
            continue
        start, sline, scol = i, line, col
        if c == '"':
            i += 1
            col += 1
            buf = []
            while True:
                if i >= n or source[i] == "\n":
                    err("closing quote", "end of line", start, sline, scol)
                ch = source[i]
                if ch == '"':
                    i += 1
                    col += 1
                    break
                if ch == "\\":
                    if i + 1 >= n or source[i + 1] not in ('"', "\\"):
                        err("escape (\\\" or \\\\)", source[i : i + 2], i, line, col, 2)
                    buf.append(source[i + 1])
                    i += 2
                    col += 2
                    continue
                buf.append(ch)
                i += 1
                col += 1
            tokens.append(Token("string", "".join(buf), sline, scol, start, i - start))
            continue
        if c.isdigit():
            while i < n and source[i].isdigit():
                i += 1
                col += 1
            digits = source[start:i]
            if i < n and (source[i].isalpha() or source[i] == "_"):
                ustart = i
                while i < n and (source[i].isalnum() or source[i] == "_"):
                    i += 1
                    col += 1
                unit = source[ustart:i]
                if unit not in _UNIT_MS:
                    err("duration unit (ms, s, m)", repr(unit), ustart, sline, scol + len(digits), len(unit))
                tokens.append(Token("duration", str(int(digits) * _UNIT_MS[unit]), sline, scol, start, i - start))
            else:
                tokens.append(Token("int", digits, sline, scol, start, i - start))
            continue
        if c.isalpha() or c == "_":
            while i < n and (source[i].isalnum() or source[i] == "_"):
                i += 1
                col += 1
            word = source[start:i]
            kind = "kw" if word in KEYWORDS else "ident"
            tokens.append(Token(kind, word, sline, scol, start, i - start))
            continue
        if source.startswith("->", i):
            tokens.append(Token("punct", "->", sline, scol, start, 2))
            i += 2
            col += 2
            continue
        if c in "{}():,@":
            tokens.append(Token("punct", c, sline, scol, start, 1))
            i += 1
            col += 1
            continue
        err("a token", repr(c), start, sline, scol)
    tokens.append(Token("eof", "", line, col, n, 0))
    return tokens


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def next(self) -> Token:
        t = self.tokens[self.pos]
        if t.kind != "eof":
            self.pos += 1
        return t

    def fail(self, expected: str) -> None:
        t = self.peek()
        raise PdlSyntaxError(t.span(), expected, t.describe(), t.offset)

    def expect_kw(self, word: str) -> Token:
        t = self.peek()
        if t.kind != "kw" or t.value != word:
            self.fail(repr(word))
        return self.next()

    def expect_punct(self, sym: str) -> Token:
        t = self.peek()
        if t.kind != "punct" or t.value != sym:
            self.fail(repr(sym))
        return self.next()

    def expect_ident(self, what: str = "identifier") -> str:
        # Keywords are contextual: every IDENT position is keyword-free in
        # the LL(1) sense, so names like a process called "send" are fine.
        t = self.peek()
        if t.kind not in ("ident", "kw"):
            self.fail(what)
        return self.next().value

    def expect_string(self) -> str:
        t = self.peek()
        if t.kind != "string":
            self.fail("string label")
        return self.next().value

    def expect_int(self) -> int:
        t = self.peek()
        if t.kind != "int":
            self.fail("integer")
        return int(self.next().value)

    def at_kw(self, *words: str) -> bool:
        t = self.peek()
        return t.kind == "kw" and t.value in words

    def at_punct(self, sym: str) -> bool:
        t = self.peek()
        return t.kind == "punct" and t.value == sym

    # grammar productions -------------------------------------------------

    def process(self) -> M.ProcessModel:
        self.expect_kw("process")
        name = self.expect_ident("process name")
        self.expect_punct("{")
        subjects: list[M.SubjectDef] = []
        messages: list[M.MessageTypeDef] = []
        channels: list[M.ChannelDef] = []
        behaviors: list[M.BehaviorDef] = []
        while not self.at_punct("}"):
            if self.at_kw("subject", "multi", "external"):
                subjects.append(self.subject())
            elif self.at_kw("message"):
                messages.append(self.message())
            elif self.at_kw("channel"):
                channels.append(self.channel())
            elif self.at_kw("behavior"):
                behaviors.append(self.behavior())
            else:
                self.fail("'subject', 'multi', 'external', 'message', 'channel', 'behavior' or '}'")
        self.expect_punct("}")
        t = self.peek()
        if t.kind != "eof":
            self.fail("end of input")
        return M.ProcessModel(
            name=name,
            subjects=tuple(subjects),
            message_types=tuple(messages),
            channels=tuple(channels),
            behaviors=tuple(behaviors),
        )

    def subject(self) -> M.SubjectDef:
        kind, max_instances = M.SINGLE, 1
        if self.at_kw("multi"):
            self.next()
            self.expect_punct("(")
            max_instances = self.expect_int()
            self.expect_punct(")")
            kind = M.MULTI
        elif self.at_kw("external"):
            self.next()
            kind = M.EXTERNAL
        self.expect_kw("subject")
        name = self.expect_ident("subject name")
        company = M.DEFAULT_COMPANY
        if self.at_punct("@"):
            self.next()
            company = self.expect_ident("company name")
        return M.SubjectDef(name, kind, max_instances, company)

    def message(self) -> M.MessageTypeDef:
        self.expect_kw("message")
        name = self.expect_ident("message name")
        self.expect_punct("{")
        fields: list[tuple[str, str]] = []
        while not self.at_punct("}"):
            fname = self.expect_ident("field name")
            self.expect_punct(":")
            t = self.peek()
            if t.kind != "kw" or t.value not in M.FIELD_TYPES:
                self.fail("'text', 'int', 'dec' or 'bool'")
            fields.append((fname, self.next().value))
        self.expect_punct("}")
        return M.MessageTypeDef(name, tuple(fields))

    def channel(self) -> M.ChannelDef:
        self.expect_kw("channel")
        frm = self.expect_ident("subject name")
        self.expect_punct("->")
        to = self.expect_ident("subject name")
        self.expect_punct(":")
        types = [self.expect_ident("message type")]
        while self.at_punct(","):
            self.next()
            types.append(self.expect_ident("message type"))
        return M.ChannelDef(frm, to, tuple(dict.fromkeys(types)))

    def behavior(self) -> M.BehaviorDef:
        self.expect_kw("behavior")
        subject = self.expect_ident("subject name")
        self.expect_punct("{")
        states: list[M.StateDef] = []
        transitions: list[M.TransitionDef] = []
        while not self.at_punct("}"):
            self.state(states, transitions)
        self.expect_punct("}")
        return M.BehaviorDef(subject, tuple(states), tuple(transitions))

    def state(self, states: list[M.StateDef], transitions: list[M.TransitionDef]) -> None:
        is_start = is_end = False
        if self.at_kw("start"):
            self.next()
            is_start = True
        if self.at_kw("end"):
            self.next()
            is_end = True
        if self.at_kw("do"):
            self.next()
            sid = self.expect_ident("state id")
            label = self.expect_string()
            states.append(M.StateDef(sid, label, M.FUNCTION, is_start, is_end))
            while self.at_kw("on"):
                self.next()
                blabel = self.expect_string()
                self.expect_punct("->")
                target = self.expect_ident("target state")
                transitions.append(M.TransitionDef(sid, target, M.Branch(blabel)))
        elif self.at_kw("send"):
            self.next()
            sid = self.expect_ident("state id")
            label = self.expect_string()
            states.append(M.StateDef(sid, label, M.SEND, is_start, is_end))
            while self.at_kw("msg"):
                self.next()
                mtype = self.expect_ident("message type")
                self.expect_kw("to")
                target_subject = self.expect_ident("subject name")
                card = self.cardinality()
                self.expect_punct("->")
                target = self.expect_ident("target state")
                transitions.append(M.TransitionDef(sid, target, M.Send(mtype, target_subject, card)))
            self.timeout_arm(sid, transitions)
        elif self.at_kw("recv"):
            self.next()
            sid = self.expect_ident("state id")
            label = self.expect_string()
            states.append(M.StateDef(sid, label, M.RECEIVE, is_start, is_end))
            while self.at_kw("msg"):
                self.next()
                mtype = self.expect_ident("message type")
                self.expect_kw("from")
                sender = self.expect_ident("subject name")
                self.expect_punct("->")
                target = self.expect_ident("target state")
                transitions.append(M.TransitionDef(sid, target, M.Receive(mtype, sender)))
            self.timeout_arm(sid, transitions)
        else:
            self.fail("'do', 'send' or 'recv'")

    def cardinality(self) -> M.Cardinality:
        if self.at_kw("one"):
            self.next()
            return M.CARD_ONE
        if self.at_kw("all"):
            self.next()
            return M.CARD_ALL
        if self.at_kw("choose"):
            self.next()
            self.expect_punct("(")
            lo = self.expect_int()
            self.expect_punct(",")
            hi = self.expect_int()
            self.expect_punct(")")
            return M.Cardinality("choose", lo, hi)
        return M.CARD_ONE

    def timeout_arm(self, sid: str, transitions: list[M.TransitionDef]) -> None:
        if not self.at_kw("timeout"):
            return
        self.next()
        t = self.peek()
        if t.kind != "duration":
            self.fail("duration (e.g. 5s)")
        ms = int(self.next().value)
        self.expect_punct("->")
        target = self.expect_ident("target state")
        transitions.append(M.TransitionDef(sid, target, M.Timeout(ms)))


def parse(source: str) -> M.ProcessModel:
    """Parse source text; raises PdlSyntaxError at the first mismatch."""
    return _Parser(tokenize(source)).process()


def _quote(label: str) -> str:
    return '"' + label.replace("\\", "\\\\").replace('"', '\\"') + '"'


def format_duration(ms: int) -> str:
    if ms % 60_000 == 0 and ms:
        return f"{ms // 60_000}m"
    if ms % 1000 == 0 and ms:
        return f"{ms // 1000}s"
    return f"{ms}ms"


def _subject_line(s: M.SubjectDef) -> str:
    if s.kind == M.MULTI:
        head = f"multi({s.max_instances}) subject {s.name}"
    elif s.kind == M.EXTERNAL:
        head = f"external subject {s.name}"
    else:
        head = f"subject {s.name}"
    if s.company != M.DEFAULT_COMPANY:
        head += f" @{s.company}"
    return head


def _card_text(card: M.Cardinality) -> str:
    if card.kind == "all":
        return " all"
    if card.kind == "choose":
        return f" choose({card.min},{card.max})"
    return ""


def _state_lines(b: M.BehaviorDef, s: M.StateDef, out: list[str]) -> None:
    flags = ("start " if s.is_start else "") + ("end " if s.is_end else "")
    kw = {M.FUNCTION: "do", M.SEND: "send", M.RECEIVE: "recv"}[s.kind]
    out.append(f"    {flags}{kw} {s.id} {_quote(s.label)}")
    timeout: M.TransitionDef | None = None
    for t in b.outgoing(s.id):
        tr = t.trigger
        if isinstance(tr, M.Timeout):
            timeout = t
        elif isinstance(tr, M.Branch):
            out.append(f"      on {_quote(tr.label)} -> {t.to_state}")
        elif isinstance(tr, M.Send):
            out.append(f"      msg {tr.message_type} to {tr.to_subject}{_card_text(tr.cardinality)} -> {t.to_state}")
        elif isinstance(tr, M.Receive):
            out.append(f"      msg {tr.message_type} from {tr.from_subject} -> {t.to_state}")
    if timeout is not None:
        out.append(f"      timeout {format_duration(timeout.trigger.duration_ms)} -> {timeout.to_state}")


def serialize(model: M.ProcessModel) -> str:
    """Canonical text form. Requires a model with no validation errors.

    Transitions are emitted grouped under their source state (timeout arm
    last), so models built programmatically in that order round-trip to
    structurally equal values.
    """
    report = M.validate(model)
    if not report.ok:
        raise M.ModelError("INVALID_MODEL", f"cannot serialize: {len(report.errors)} validation errors")
    out = [f"process {model.name} {{"]
    for s in model.subjects:
        out.append(f"  {_subject_line(s)}")
    for m in model.message_types:
        if not m.payload_schema:
            out.append(f"  message {m.name} {{}}")
            continue
        out.append(f"  message {m.name} {{")
        for fname, ftype in m.payload_schema:
            out.append(f"    {fname}: {ftype}")
        out.append("  }")
    for c in model.channels:
        out.append(f"  channel {c.from_subject} -> {c.to_subject}: {', '.join(c.message_types)}")
    for b in model.behaviors:
        out.append(f"  behavior {b.subject} {{")
        for s in b.states:
            _state_lines(b, s, out)
        out.append("  }")
    out.append("}")
    return "\n".join(out) + "\n"
