import itertools
import json

import pytest

from subjektiv import trace
from subjektiv.patterns import CaseResult, case, corpus, run_case
from subjektiv.tasks import DeciderScript, Rule, run_scripted


def test_corpus_has_thirteen_cases():
    names = [c.name for c in corpus()]
    assert len(names) == 13
    assert names.count("send_receive") == 1
    for expected in (
        "send_receive",
        "racing",
        "one_to_many",
        "multi_responses",
        "contingent_request",
        "atomic_multicast",
        "request_with_referral",
        "relayed_request",
        "dynamic_routing",
        "send",
        "receive",
        "one_to_many_send",
        "one_from_many_receive",
    ):
        assert expected in names


def test_corpus_files_exist():
    for c in corpus():
        assert c.model_source()
        assert c.script_data()
        assert c.golden()
        for v in c.variants:
            assert c.script_data(v.name)
            assert c.golden(v.name)


def test_quorum_script_is_three_of_four():
    data = case("one_to_many").script_data()
    quorum_rules = [r for r in data["rules"] if r.get("state") == "check" and r.get("occurrence") == 3]
    assert quorum_rules and quorum_rules[0]["choice"] == {"branch": "enough"}
    declines = [r for r in data["rules"] if r["choice"].get("branch") == "decline"]
    assert len(declines) == 1  # exactly one of four withholds


def test_multi_responses_plan_includes_window_close():
    assert 5000 in case("multi_responses").advance_plan()


def test_send_receive_final_statuses():
    run = case("send_receive").run()
    assert run.statuses == {"Customer#0": "completed", "Supplier#0": "completed"}


@pytest.mark.parametrize("name", [c.name for c in corpus()])
def test_run_case_passes(name):
    result = run_case(name)
    assert result.passed, result.message


@pytest.mark.parametrize(
    "name,variant",
    [(c.name, v.name) for c in corpus() for v in c.variants],
)
def test_run_case_variants_pass(name, variant):
    result = run_case(name, variant)
    assert result.passed, result.message


def test_racing_both_choices_are_legal():
    earliest = case("racing").run()
    latest = case("racing").run("latest")
    first_pick = next(r for r in earliest.trace if r["kind"] == "decision" and r["detail"]["kind"] == "pick")
    assert first_pick["detail"]["choice"]["envelope"]["from"] == "A#0"
    first_pick = next(r for r in latest.trace if r["kind"] == "decision" and r["detail"]["kind"] == "pick")
    assert first_pick["detail"]["choice"]["envelope"]["from"] == "B#0"
    # either way the loser's message is explicitly discarded, leaving no residue
    assert earliest.residue == {} and latest.residue == {}


def test_tampered_golden_fails():
    c = case("send_receive")
    golden = c.golden()
    run = c.run()
    tampered = json.loads(json.dumps(run.trace))
    tampered[3]["detail"]["status"] = "tampered"
    idx = trace.first_divergence(tampered, golden)
    assert idx == 3


# pattern invariants ---------------------------------------------------------


def _atomic_script(answers: tuple[bool, bool, bool]) -> tuple[DeciderScript, list[int]]:
    rules = [
        Rule("Customer", "create", choice={"branch": "done", "payload": {"item": "steel"}}),
        Rule("Customer", "multicast", choice={"send": {"count": 3}}),
        Rule("Supplier", "get", choice={"pick": "earliest"}),
    ]
    for index, answers_offer in enumerate(answers):
        rules.append(
            Rule("Supplier", "handle", index=index, choice={"branch": "offer" if answers_offer else "withhold"})
        )
    rules += [
        Rule("Supplier", "send_offer", choice={"send": {"payload": {"price": 10.0}}}),
        Rule("Supplier", "wait_answer", choice={"pick": "earliest"}),
        Rule("Customer", "collect", choice={"pick": "earliest"}),
        Rule("Customer", "tally", occurrence=3, choice={"branch": "all"}),
        Rule("Customer", "tally", choice={"branch": "more"}),
        Rule("Customer", "confirm_all", choice={"send": {"payload": {"note": "deal"}}}),
        Rule("Customer", "notify_error", choice={"send": {"payload": {"note": "missed"}}}),
    ]
    return DeciderScript(rules=rules), [6000]


def test_atomic_multicast_all_or_nothing():
    model = case("atomic_multicast").model()
    for answers in itertools.product((True, False), repeat=3):
        run = run_scripted(model, {"Customer": 1}, _atomic_script(answers)[0], advance_plan=_atomic_script(answers)[1])
        consumed_by_supplier = [
            r["detail"]["choice"]["envelope"]["type"]
            for r in run.trace
            if r["kind"] == "decision"
            and r["detail"]["kind"] == "pick"
            and r["agent"].startswith("Supplier")
            and r["detail"]["choice"]["envelope"]["type"] in ("Confirmation", "Error")
        ]
        assert len(consumed_by_supplier) == 3, (answers, consumed_by_supplier)
        kinds = set(consumed_by_supplier)
        assert len(kinds) == 1, f"mixed outcome for {answers}: {consumed_by_supplier}"
        expected = "Confirmation" if all(answers) else "Error"
        assert kinds == {expected}, (answers, kinds)
        assert all(s == "completed" for s in run.statuses.values()), (answers, run.statuses)


def _contingent_script(b_answers: bool, a_answers: bool) -> DeciderScript:
    def supplier_rules(name: str, answers: bool) -> list[Rule]:
        rules = [Rule(name, "get", choice={"pick": "earliest"})]
        if answers:
            rules += [
                Rule(name, "create", choice={"branch": "send"}),
                Rule(name, "send_offer", choice={"send": {"payload": {"price": 5.0}}}),
            ]
        else:
            rules += [Rule(name, "create", choice={"skip": True})]
        return rules

    rules = [
        Rule("Customer", "create", choice={"branch": "done", "payload": {"item": "parts"}}),
        Rule("Customer", "send_b", choice={"send": {}}),
        Rule("Customer", "send_a", choice={"send": {}}),
        Rule("Customer", "wait_b", choice={"pick": "earliest"}),
        Rule("Customer", "wait_a", choice={"pick": "earliest"}),
    ]
    rules += supplier_rules("SupplierB", b_answers)
    rules += supplier_rules("SupplierA", a_answers)
    return DeciderScript(rules=rules)


def test_contingent_request_customer_always_completes():
    model = case("contingent_request").model()
    for b_answers, a_answers in itertools.product((True, False), repeat=2):
        run = run_scripted(
            model, {"Customer": 1}, _contingent_script(b_answers, a_answers), advance_plan=[5000, 10_000]
        )
        assert run.statuses["Customer#0"] == "completed", (b_answers, a_answers, run.statuses)
        assert run.pending_timers == 0


def test_multi_responses_late_messages_never_consumed():
    run = case("multi_responses").run()
    # recipient's window closed at 5000 with one response still pooled
    timeout_records = [r for r in run.trace if r["kind"] == "timeout"]
    assert [r["agent"] for r in timeout_records] == ["Recipient#0"]
    window_close_seq = timeout_records[0]["seq"]
    picks_after = [
        r
        for r in run.trace
        if r["kind"] == "decision" and r["agent"] == "Recipient#0" and r["seq"] > window_close_seq
    ]
    assert picks_after == []
    assert run.residue == {"Recipient#0": [("Response", "Supplier")]}


def _referral_script(supplier_choice: str, transport_choice: str) -> DeciderScript:
    return DeciderScript(
        rules=[
            Rule("Customer", "create", choice={"branch": "done", "payload": {"item": "cargo"}}),
            Rule("Customer", "send_request", choice={"send": {}}),
            Rule("Customer", "wait", choice={"pick": "earliest"}),
            Rule("Supplier", "get", choice={"pick": "earliest"}),
            Rule("Supplier", "handle", choice={"branch": supplier_choice}),
            Rule("Supplier", "forward", choice={"send": {}}),
            Rule("Supplier", "send_error", choice={"send": {"payload": {"note": "no"}}}),
            Rule("Transport", "get", choice={"pick": "earliest"}),
            Rule("Transport", "handle", choice={"branch": transport_choice}),
            Rule("Transport", "send_confirmation", choice={"send": {"payload": {"note": "ok"}}}),
            Rule("Transport", "send_error", choice={"send": {"payload": {"note": "no"}}}),
        ]
    )


def test_request_with_referral_exactly_one_outcome():
    model = case("request_with_referral").model()
    outcomes = {
        ("reject", "confirm"): "rejected",
        ("reject", "reject"): "rejected",
        ("forward", "confirm"): "confirmed",
        ("forward", "reject"): "failed",
    }
    for (supplier_choice, transport_choice), end_state in outcomes.items():
        run = run_scripted(model, {"Customer": 1}, _referral_script(supplier_choice, transport_choice))
        consumed = [
            (r["detail"]["choice"]["envelope"]["type"], r["detail"]["choice"]["envelope"]["from"])
            for r in run.trace
            if r["kind"] == "decision" and r["detail"]["kind"] == "pick" and r["agent"] == "Customer#0"
        ]
        assert len(consumed) == 1
        assert run.agent_states["Customer#0"] == end_state
        assert run.statuses["Customer#0"] == "completed"


def test_dynamic_routing_exactly_one_route():
    notify = case("dynamic_routing").run()
    direct = case("dynamic_routing").run("ship_direct")
    for run, used, unused in (
        (notify, "notify", "ship"),
        (direct, "ship", "notify"),
    ):
        send_states = [
            r["detail"]["state"]
            for r in run.trace
            if r["kind"] == "decision" and r["agent"] == "Warehouse#0" and r["detail"]["kind"] == "send"
        ]
        assert used in send_states
        assert unused not in send_states
        assert all(s == "completed" for s in run.statuses.values())


def test_relayed_request_customer_and_agency_see_same_outcomes():
    run = case("relayed_request").run()
    def observed(agent: str):
        return sorted(
            r["detail"]["choice"]["envelope"]["type"]
            for r in run.trace
            if r["kind"] == "decision"
            and r["agent"] == agent
            and r["detail"]["kind"] == "pick"
            and r["detail"]["choice"]["envelope"]["from"].startswith("Contractor")
        )
    assert observed("Customer#0") == observed("Agency#0") == ["Confirmation", "Confirmation"]


def test_degenerate_cases_documented():
    for name in ("send", "receive", "one_to_many_send", "one_from_many_receive"):
        assert "degenerate" in case(name).description.lower()


def test_distributed_assignment_validated():
    from subjektiv.patterns.distributed import run_case_distributed

    with pytest.raises(ValueError, match="missing subjects.*Supplier"):
        run_case_distributed("send_receive", assignment={"Customer": 0})
    with pytest.raises(ValueError, match="at least 2 nodes"):
        run_case_distributed("send_receive", assignment={"Customer": 0, "Supplier": 0})
