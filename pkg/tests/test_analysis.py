from subjektiv import analysis
from subjektiv import model as M
from subjektiv import pdl
from subjektiv.analysis import ExploreBounds, abstract_of_run, encode_state, explore, find_deadlocks, find_message_leaks
from subjektiv.patterns import case, corpus
from subjektiv.tasks import DeciderScript, run_scripted

from conftest import drop_transitions


def no_timer_multi_responses():
    return drop_transitions(
        case("multi_responses").model(), "Recipient", lambda t: isinstance(t.trigger, M.Timeout)
    )


def no_discard_racing():
    m = case("racing").model()
    behaviors = []
    for b in m.behaviors:
        if b.subject == "C":
            states = tuple(s for s in b.states if s.id in ("wait", "finish"))
            transitions = tuple(
                M.TransitionDef("wait", "finish", t.trigger) for t in b.transitions if t.from_state == "wait"
            )
            behaviors.append(M.BehaviorDef("C", states, transitions))
        else:
            behaviors.append(b)
    return M.ProcessModel(m.name, m.subjects, m.message_types, m.channels, tuple(behaviors))


# explore ----------------------------------------------------------------------


def test_explore_send_receive_finite_and_clean():
    m = case("send_receive").model()
    result = explore(m, {"Customer": 1})
    assert not result.truncated
    assert result.states > 1
    space, seen, parents, order, _ = analysis._explore(m, {"Customer": 1}, ExploreBounds())
    terminals = [s for s in order if not analysis._enabled_moves(space, s)]
    assert terminals, "expected at least one terminal state"
    for t in terminals:
        assert all(a[3] for a in t), f"non-completed agent in terminal {t}"


def test_explore_one_to_many_has_stuck_supplier_terminals():
    m = case("one_to_many").model()
    space, seen, parents, order, _ = analysis._explore(m, {"Supplier": 1}, ExploreBounds())
    stuck = [
        s
        for s in order
        if not analysis._enabled_moves(space, s)
        and any(a[0] == "Supplier" and not a[3] for a in s)
    ]
    assert stuck


def test_explore_contingent_terminals_have_completed_customer():
    m = case("contingent_request").model()
    space, seen, parents, order, _ = analysis._explore(m, {"Customer": 1}, ExploreBounds())
    terminals = [s for s in order if not analysis._enabled_moves(space, s)]
    assert terminals
    for t in terminals:
        customer = next(a for a in t if a[0] == "Customer")
        assert customer[3], f"customer not completed in terminal {t}"


# find_deadlocks ------------------------------------------------------------------


def test_deadlock_verdicts_match_commentary():
    assert find_deadlocks(case("send_receive").model(), {"Customer": 1}) == []
    assert find_deadlocks(case("contingent_request").model(), {"Customer": 1}) == []
    assert find_deadlocks(case("request_with_referral").model(), {"Customer": 1}) == []
    assert len(find_deadlocks(case("one_to_many").model(), {"Supplier": 1})) >= 1
    assert find_deadlocks(case("multi_responses").model(), {"Supplier": 1}) == []
    assert len(find_deadlocks(no_timer_multi_responses(), {"Supplier": 1})) >= 1


def test_deadlock_paths_replay_to_stuck_states():
    for model, starters in (
        (case("one_to_many").model(), {"Supplier": 1}),
        (no_timer_multi_responses(), {"Supplier": 1}),
    ):
        for deadlock in find_deadlocks(model, starters):
            script = DeciderScript.from_dict(deadlock.script)
            run = run_scripted(model, starters, script, advance_plan=deadlock.advance_plan)
            assert run.open_tasks == []
            assert run.pending_timers == 0
            assert run.quiescent
            assert any(s != "completed" for s in run.statuses.values())
            assert abstract_of_run(model, run.agent_states, run.statuses, run.residue) == deadlock.state


# find_message_leaks ---------------------------------------------------------------


def test_racing_discard_prevents_leaks():
    assert find_message_leaks(case("racing").model(), {"A": 1, "B": 1}) == []


def test_racing_without_discard_leaks_one_notification():
    m = no_discard_racing()
    assert M.validate(m).ok
    leaks = find_message_leaks(m, {"A": 1, "B": 1})
    assert leaks
    for leak in leaks:
        assert leak.residue == {"C#0": [("Notification", "A")]} or leak.residue == {
            "C#0": [("Notification", "B")]
        }


def test_multi_responses_leaks_reported_with_counts():
    leaks = find_message_leaks(case("multi_responses").model(), {"Supplier": 1})
    assert leaks
    counts = [sum(len(entries) for entries in leak.residue.values()) for leak in leaks]
    assert all(count >= 1 for count in counts)
    assert max(counts) <= ExploreBounds().pool_bound


# agreement with the engine ----------------------------------------------------------


def test_golden_terminal_states_appear_in_explored_graph():
    for c in corpus():
        model = c.model()
        run = c.run()
        final = abstract_of_run(model, run.agent_states, run.statuses, run.residue)
        space, seen, parents, order, _ = analysis._explore(model, c.starters(), ExploreBounds())
        assert final in seen, f"{c.name}: golden terminal state not reachable in analysis"


# monotonicity ---------------------------------------------------------------------


def test_larger_bounds_keep_deadlocks():
    small = ExploreBounds(max_instances=4, pool_bound=8)
    large = ExploreBounds(max_instances=5, pool_bound=10)
    for model, starters in (
        (case("one_to_many").model(), {"Supplier": 1}),
        (no_timer_multi_responses(), {"Supplier": 1}),
    ):
        small_states = {encode_state(d.state) for d in find_deadlocks(model, starters, small)}
        large_states = {encode_state(d.state) for d in find_deadlocks(model, starters, large)}
        assert small_states <= large_states


# external subjects are environment ---------------------------------------------------


def test_external_subject_acts_as_environment():
    m = pdl.parse(
        """
        process p {
          subject X
          external subject Z
          message Ping { note: text }
          channel Z -> X: Ping
          behavior X {
            start recv r "wait" msg Ping from Z -> e
            end do e "done"
          }
        }
        """
    )
    assert M.validate(m).ok
    # X waits on the external party; the environment can always send, so no deadlock
    assert find_deadlocks(m, {"X": 1}) == []
    result = explore(m, {"X": 1})
    assert result.states > 1


def test_bounds_truncation_flag():
    result = explore(case("multi_responses").model(), {"Supplier": 1}, ExploreBounds(pool_bound=2))
    assert result.truncated
