"""Executable corpus of the classic service-interaction patterns.

Nine detailed patterns plus four degenerate ones (send, receive,
one-to-many send, one-from-many receive are the detailed patterns with a
leg removed; each description says which). Every case carries a model, a
decider script, the frozen golden trace, and the expected final statuses
and pool residue. Alternate legal runs (e.g. racing picks the later
message) are variants of a case, not extra corpus entries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Any

from .. import pdl, trace
from ..model import ProcessModel
from ..tasks import DeciderScript, RunResult, run_scripted

Statuses = dict[str, str]
Residue = dict[str, list[list[str]]]


def _corpus_text(name: str) -> str:
    return (resources.files(__package__) / "corpus" / name).read_text(encoding="utf-8")


def corpus_path(name: str):
    return resources.files(__package__) / "corpus" / name


@dataclass(frozen=True)
class Variant:
    name: str
    script_file: str
    golden_file: str
    expected_statuses: Statuses
    expected_residue: Residue


@dataclass(frozen=True)
class PatternCase:
    name: str
    description: str
    expected_statuses: Statuses
    expected_residue: Residue = field(default_factory=dict)
    variants: tuple[Variant, ...] = ()

    @property
    def model_file(self) -> str:
        return f"{self.name}.sbpm"

    def script_file(self, variant: str | None = None) -> str:
        if variant is None:
            return f"{self.name}.script.json"
        return self._variant(variant).script_file

    def golden_file(self, variant: str | None = None) -> str:
        if variant is None:
            return f"{self.name}.golden.jsonl"
        return self._variant(variant).golden_file

    def _variant(self, name: str) -> Variant:
        for v in self.variants:
            if v.name == name:
                return v
        raise KeyError(f"{self.name} has no variant {name!r}")

    def model_source(self) -> str:
        return _corpus_text(self.model_file)

    def model(self) -> ProcessModel:
        return pdl.parse(self.model_source())

    def script_data(self, variant: str | None = None) -> dict[str, Any]:
        return json.loads(_corpus_text(self.script_file(variant)))

    def script(self, variant: str | None = None) -> DeciderScript:
        return DeciderScript.from_dict(self.script_data(variant))

    def starters(self, variant: str | None = None) -> dict[str, int]:
        return dict(self.script_data(variant)["starters"])

    def advance_plan(self, variant: str | None = None) -> list[int]:
        return list(self.script_data(variant).get("advance", []))

    def golden(self, variant: str | None = None) -> list[dict[str, Any]]:
        return trace.load_trace(_corpus_text(self.golden_file(variant)))

    def expectations(self, variant: str | None = None) -> tuple[Statuses, Residue]:
        if variant is None:
            return self.expected_statuses, self.expected_residue
        v = self._variant(variant)
        return v.expected_statuses, v.expected_residue

    def run(self, variant: str | None = None) -> RunResult:
        return run_scripted(
            self.model(),
            self.starters(variant),
            self.script(variant),
            advance_plan=self.advance_plan(variant),
        )


_ALL_DONE = {
    "send_receive": {"Customer#0": "completed", "Supplier#0": "completed"},
    "racing": {"A#0": "completed", "B#0": "completed", "C#0": "completed"},
}

_CASES: tuple[PatternCase, ...] = (
    PatternCase(
        name="send_receive",
        description="Request then response between a customer and a supplier.",
        expected_statuses=_ALL_DONE["send_receive"],
    ),
    PatternCase(
        name="racing",
        description="Two senders race; the receiver picks one notification and discards the loser's.",
        expected_statuses=_ALL_DONE["racing"],
        variants=(
            Variant(
                name="latest",
                script_file="racing.latest.script.json",
                golden_file="racing.latest.golden.jsonl",
                expected_statuses=_ALL_DONE["racing"],
                expected_residue={},
            ),
        ),
    ),
    PatternCase(
        name="one_to_many",
        description="Offer fanned out to four customers; the supplier collects confirmations until quorum (3 of 4).",
        expected_statuses={
            "Supplier#0": "completed",
            "Customer#0": "completed",
            "Customer#1": "completed",
            "Customer#2": "completed",
            "Customer#3": "completed",
        },
        variants=(
            Variant(
                name="all_confirm",
                script_file="one_to_many.all_confirm.script.json",
                golden_file="one_to_many.all_confirm.golden.jsonl",
                expected_statuses={
                    "Supplier#0": "completed",
                    "Customer#0": "completed",
                    "Customer#1": "completed",
                    "Customer#2": "completed",
                    "Customer#3": "completed",
                },
                expected_residue={},
            ),
            Variant(
                name="under_quorum",
                script_file="one_to_many.under_quorum.script.json",
                golden_file="one_to_many.under_quorum.golden.jsonl",
                expected_statuses={
                    "Supplier#0": "waiting_message",
                    "Customer#0": "completed",
                    "Customer#1": "completed",
                    "Customer#2": "completed",
                    "Customer#3": "completed",
                },
                expected_residue={},
            ),
        ),
    ),
    PatternCase(
        name="multi_responses",
        description="Responses stream in until the recipient's five-second window closes; later ones are inert.",
        expected_statuses={"Supplier#0": "completed", "Recipient#0": "completed"},
        expected_residue={"Recipient#0": [["Response", "Supplier"]]},
    ),
    PatternCase(
        name="contingent_request",
        description="Ask supplier B first; on timeout fall back to supplier A. The customer always finishes.",
        expected_statuses={
            "Customer#0": "completed",
            "SupplierA#0": "completed",
            "SupplierB#0": "waiting_decision",
        },
    ),
    PatternCase(
        name="atomic_multicast",
        description="All-or-nothing notification: confirmations only if every offer arrives in the window, errors otherwise.",
        expected_statuses={
            "Customer#0": "completed",
            "Supplier#0": "completed",
            "Supplier#1": "completed",
            "Supplier#2": "completed",
        },
    ),
    PatternCase(
        name="request_with_referral",
        description="Supplier forwards the request; the transport answers the customer directly.",
        expected_statuses={
            "Customer#0": "completed",
            "Supplier#0": "completed",
            "Transport#0": "completed",
        },
    ),
    PatternCase(
        name="relayed_request",
        description="Agency relays to contractors; agency and customer see the same outcome stream.",
        expected_statuses={
            "Customer#0": "completed",
            "Agency#0": "completed",
            "Contractor#0": "completed",
            "Contractor#1": "completed",
        },
    ),
    PatternCase(
        name="dynamic_routing",
        description="Warehouse routes per order data: notify the customer, or ship directly.",
        expected_statuses={
            "Customer#0": "completed",
            "Sales#0": "completed",
            "Warehouse#0": "completed",
            "Transport#0": "completed",
        },
        variants=(
            Variant(
                name="ship_direct",
                script_file="dynamic_routing.ship_direct.script.json",
                golden_file="dynamic_routing.ship_direct.golden.jsonl",
                expected_statuses={
                    "Customer#0": "completed",
                    "Sales#0": "completed",
                    "Warehouse#0": "completed",
                    "Transport#0": "completed",
                },
                expected_residue={},
            ),
        ),
    ),
    PatternCase(
        name="send",
        description="Degenerate send_receive: the one-way request without the response leg.",
        expected_statuses={"Notifier#0": "completed", "Listener#0": "completed"},
    ),
    PatternCase(
        name="receive",
        description="Degenerate send_receive seen from the receiving side: a single inbound message.",
        expected_statuses={"Collector#0": "completed", "Reporter#0": "completed"},
    ),
    PatternCase(
        name="one_to_many_send",
        description="Degenerate one_to_many: the fan-out without the confirmation leg.",
        expected_statuses={
            "Broadcaster#0": "completed",
            "Listener#0": "completed",
            "Listener#1": "completed",
            "Listener#2": "completed",
        },
    ),
    PatternCase(
        name="one_from_many_receive",
        description="Degenerate racing/one_to_many: one collector drains messages from several senders.",
        expected_statuses={
            "Reporter#0": "completed",
            "Reporter#1": "completed",
            "Collector#0": "completed",
        },
    ),
)


def corpus() -> list[PatternCase]:
    return list(_CASES)


def case(name: str) -> PatternCase:
    for c in _CASES:
        if c.name == name:
            return c
    raise KeyError(f"unknown corpus case {name!r}")


@dataclass
class CaseResult:
    name: str
    variant: str | None
    passed: bool
    message: str
    run: RunResult


def _normalize_residue(residue: dict[str, list]) -> Residue:
    return {agent: sorted([list(e) for e in entries]) for agent, entries in residue.items()}


def run_case(name: str, variant: str | None = None) -> CaseResult:
    """Execute a corpus case and compare against its golden trace."""
    c = case(name)
    run = c.run(variant)
    golden = c.golden(variant)
    idx = trace.first_divergence(run.trace, golden)
    if idx is not None:
        got = trace.dump_record(run.trace[idx]) if idx < len(run.trace) else "<end of trace>"
        want = trace.dump_record(golden[idx]) if idx < len(golden) else "<end of golden>"
        return CaseResult(name, variant, False, f"trace diverges at record {idx}:\n  got  {got}\n  want {want}", run)
    expected_statuses, expected_residue = c.expectations(variant)
    if run.statuses != expected_statuses:
        return CaseResult(name, variant, False, f"statuses {run.statuses} != expected {expected_statuses}", run)
    if _normalize_residue(run.residue) != _normalize_residue(expected_residue):
        return CaseResult(name, variant, False, f"residue {run.residue} != expected {expected_residue}", run)
    return CaseResult(name, variant, True, "PASS", run)
