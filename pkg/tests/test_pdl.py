import random

import pytest

from subjektiv import model as M
from subjektiv import pdl
from subjektiv.patterns import corpus, case

# parse ------------------------------------------------------------------------


def test_minimal_process_parses_and_validate_flags_rest():
    m = pdl.parse("process P { subject X }")
    assert m.name == "P"
    assert [s.name for s in m.subjects] == ["X"]
    assert "BEHAVIOR_MISSING" in M.validate(m).rules()


def test_send_receive_corpus_counts(send_receive_model):
    m = send_receive_model
    assert len(m.subjects) == 2
    assert len(m.message_types) == 2
    assert len(m.channels) == 2
    assert len(m.behavior("Customer").states) == 4
    assert len(m.behavior("Supplier").states) == 4


def test_timeout_duration_parses_to_ms():
    m = pdl.parse(
        """
        process p {
          subject X
          behavior X {
            start recv r1 "Wait"
              timeout 5s -> e1
            end do e1 "done"
          }
        }
        """
    )
    timeout = m.behavior("X").timeout_of("r1")
    assert timeout is not None
    assert timeout.trigger.duration_ms == 5000


def test_duration_units():
    for text, ms in (("250ms", 250), ("1s", 1000), ("2m", 120_000), ("1000ms", 1000)):
        m = pdl.parse(
            f"""
            process p {{
              subject X
              behavior X {{
                start recv r "w"
                  timeout {text} -> e
                end do e "d"
              }}
            }}
            """
        )
        assert m.behavior("X").timeout_of("r").trigger.duration_ms == ms


def test_duration_canonical_form():
    assert pdl.format_duration(1000) == "1s"
    assert pdl.format_duration(5000) == "5s"
    assert pdl.format_duration(120_000) == "2m"
    assert pdl.format_duration(1500) == "1500ms"
    assert pdl.format_duration(90_000) == "90s"


def test_parse_error_position():
    with pytest.raises(pdl.PdlSyntaxError) as exc_info:
        pdl.parse("process P { subject }")
    err = exc_info.value
    assert err.span.line == 1
    assert err.span.column == 21
    assert "subject name" in err.expected


def test_string_escapes_round_trip():
    m = pdl.parse(
        """
        process p {
          subject X
          behavior X {
            start end do a "say \\"hi\\" and \\\\"
          }
        }
        """
    )
    state = m.behavior("X").state("a")
    assert state.label == 'say "hi" and \\'
    assert pdl.parse(pdl.serialize(m)) == m


def test_keywords_usable_as_names():
    m = pdl.parse("process send { subject X }")
    assert m.name == "send"


# serialize ---------------------------------------------------------------------


def test_empty_process_serializes_exactly():
    assert pdl.serialize(M.ProcessModel(name="P")) == "process P {\n}\n"


def test_corpus_serialization_is_fixpoint():
    for c in corpus():
        src = c.model_source()
        once = pdl.serialize(pdl.parse(src))
        twice = pdl.serialize(pdl.parse(once))
        assert once == twice, c.name
        assert pdl.parse(once) == pdl.parse(src), c.name


def test_corpus_files_are_canonical():
    for c in corpus():
        src = c.model_source()
        assert pdl.serialize(pdl.parse(src)) == src, f"{c.name} not stored canonically"


def test_programmatic_racing_round_trip(racing_model):
    # rebuild the racing model by hand, serialize, reparse, compare
    m = racing_model
    rebuilt = M.ProcessModel(
        name=m.name,
        subjects=tuple(M.SubjectDef(s.name, s.kind, s.max_instances, s.company) for s in m.subjects),
        message_types=tuple(M.MessageTypeDef(t.name, t.payload_schema) for t in m.message_types),
        channels=tuple(M.ChannelDef(ch.from_subject, ch.to_subject, ch.message_types) for ch in m.channels),
        behaviors=tuple(
            M.BehaviorDef(b.subject, b.states, b.transitions) for b in m.behaviors
        ),
    )
    assert pdl.parse(pdl.serialize(rebuilt)) == rebuilt


# random model generator ----------------------------------------------------------

_TYPES = ("text", "int", "dec", "bool")


def _random_model(rng: random.Random, idx: int) -> M.ProcessModel:
    n_subjects = rng.randint(1, 4)
    subjects = []
    for i in range(n_subjects):
        kind_roll = rng.random()
        if kind_roll < 0.2 and n_subjects > 1:
            subjects.append(M.SubjectDef(f"S{i}", M.MULTI, rng.randint(2, 5)))
        elif kind_roll < 0.3 and n_subjects > 1 and i > 0:
            subjects.append(M.SubjectDef(f"S{i}", M.EXTERNAL, 1))
        else:
            company = "acme" if rng.random() < 0.2 else M.DEFAULT_COMPANY
            subjects.append(M.SubjectDef(f"S{i}", M.SINGLE, 1, company))
    internal = [s for s in subjects if s.kind != M.EXTERNAL]
    messages = [
        M.MessageTypeDef(
            f"Msg{j}",
            tuple((f"f{k}", rng.choice(_TYPES)) for k in range(rng.randint(0, 3))),
        )
        for j in range(rng.randint(1, 3))
    ]
    channel_types: dict[tuple[str, str], list[str]] = {}

    def note_channel(frm: str, to: str, mtype: str) -> None:
        types = channel_types.setdefault((frm, to), [])
        if mtype not in types:
            types.append(mtype)

    behaviors = []
    for s in internal:
        partners = [p for p in subjects if p.name != s.name]
        n_states = rng.randint(2, 6)
        ids = [f"st{k}" for k in range(n_states)]
        states: list[M.StateDef] = []
        transitions: list[M.TransitionDef] = []
        for k, sid in enumerate(ids):
            last = k == n_states - 1
            if last:
                states.append(M.StateDef(sid, f"finish {idx}", M.FUNCTION, is_start=(k == 0), is_end=True))
                continue
            later = ids[k + 1 :]
            kind = rng.choice((M.FUNCTION, M.SEND, M.RECEIVE)) if partners else M.FUNCTION
            if kind == M.FUNCTION:
                states.append(M.StateDef(sid, f"work {k}", M.FUNCTION, is_start=(k == 0)))
                transitions.append(M.TransitionDef(sid, ids[k + 1], M.Branch("go")))
                if rng.random() < 0.4 and len(later) > 1:
                    transitions.append(M.TransitionDef(sid, rng.choice(later), M.Branch("alt")))
            elif kind == M.SEND:
                states.append(M.StateDef(sid, f"send {k}", M.SEND, is_start=(k == 0)))
                target = rng.choice(partners)
                mtype = rng.choice(messages).name
                if target.kind == M.MULTI and rng.random() < 0.6:
                    card = rng.choice((M.CARD_ALL, M.Cardinality("choose", 1, rng.randint(1, target.max_instances))))
                else:
                    card = M.CARD_ONE
                transitions.append(M.TransitionDef(sid, ids[k + 1], M.Send(mtype, target.name, card)))
                note_channel(s.name, target.name, mtype)
                if rng.random() < 0.3:
                    transitions.append(
                        M.TransitionDef(sid, rng.choice(later), M.Timeout(rng.choice((500, 1000, 90_000, 120_000))))
                    )
            else:
                states.append(M.StateDef(sid, f"recv {k}", M.RECEIVE, is_start=(k == 0)))
                sender = rng.choice(partners)
                mtype = rng.choice(messages).name
                transitions.append(M.TransitionDef(sid, ids[k + 1], M.Receive(mtype, sender.name)))
                note_channel(sender.name, s.name, mtype)
                if rng.random() < 0.4 and len(later) > 1:
                    sender2 = rng.choice(partners)
                    mtype2 = rng.choice(messages).name
                    target2 = rng.choice(later)
                    if (mtype2, sender2.name) != (mtype, sender.name):
                        transitions.append(M.TransitionDef(sid, target2, M.Receive(mtype2, sender2.name)))
                        note_channel(sender2.name, s.name, mtype2)
                if rng.random() < 0.3:
                    transitions.append(
                        M.TransitionDef(sid, rng.choice(later), M.Timeout(rng.choice((250, 1000, 60_000))))
                    )
        behaviors.append(M.BehaviorDef(s.name, tuple(states), tuple(transitions)))
    channels = tuple(
        M.ChannelDef(frm, to, tuple(types)) for (frm, to), types in channel_types.items()
    )
    return M.ProcessModel(
        name=f"gen{idx}",
        subjects=tuple(subjects),
        message_types=tuple(messages),
        channels=channels,
        behaviors=tuple(behaviors),
    )


def test_round_trip_500_random_models():
    rng = random.Random(20260809)
    checked = 0
    for idx in range(500):
        m = _random_model(rng, idx)
        report = M.validate(m)
        assert report.ok, f"model {idx}: {[(v.rule, v.location, v.message) for v in report.errors]}"
        text = pdl.serialize(m)
        reparsed = pdl.parse(text)
        assert reparsed == m, f"model {idx} round trip"
        assert pdl.serialize(reparsed) == text, f"model {idx} fixpoint"
        checked += 1
    assert checked == 500


# mutation position property ------------------------------------------------------


def _tolerant_tokens(text: str):
    """(kind, value) list plus the offset where lexing failed, if it did."""
    try:
        tokens = pdl.tokenize(text)
        return [(t.kind, t.value) for t in tokens], [t.offset for t in tokens], None
    except pdl.PdlSyntaxError as exc:
        prefix = text[: exc.offset]
        try:
            tokens = pdl.tokenize(prefix)
            pairs = [(t.kind, t.value) for t in tokens][:-1]  # drop eof
            offsets = [t.offset for t in tokens][:-1]
        except pdl.PdlSyntaxError:
            pairs, offsets = [], []
        return pairs, offsets, exc.offset


def test_deletion_mutations_report_positions_near_the_damage():
    source = case("send_receive").model_source()
    orig_pairs, _, _ = _tolerant_tokens(source)
    rng = random.Random(7)
    positions = rng.sample(range(len(source) - 1), 100)
    parsed_fine = 0
    for k in positions:
        mutated = source[:k] + source[k + 1 :]
        try:
            pdl.parse(mutated)
            parsed_fine += 1
            continue
        except pdl.PdlSyntaxError as exc:
            err_offset = exc.offset
        pairs, offsets, lex_fail = _tolerant_tokens(mutated)
        divergence = next(
            (i for i, (a, b) in enumerate(zip(pairs, orig_pairs)) if a != b),
            min(len(pairs), len(orig_pairs)),
        )
        if lex_fail is not None and err_offset >= lex_fail:
            continue  # lexer stopped exactly at the damage
        err_token = next((i for i, off in enumerate(offsets) if off + 1 > err_offset), len(pairs))
        assert err_token <= divergence + 1, (
            f"deletion at {k}: error token {err_token} vs divergence {divergence}\n"
            f"error at offset {err_offset}: {exc}"
        )
    assert parsed_fine < 100  # most mutations must actually break the parse
