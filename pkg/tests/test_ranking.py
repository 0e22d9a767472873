import dataclasses
from datetime import datetime, timezone

import pytest
from hypothesis import given, strategies as st

from autotsg.actions import ActionRequest
from autotsg.config import DEFAULT_CONFIG
from autotsg.context import ExecutionContext
from autotsg.executor import Finding, StepOutcome
from autotsg.model import ActionKind
from autotsg.ranking import (
    NO_PROBLEM_STATEMENT,
    ProductProfile,
    RankingUnavailable,
    StubRankerClient,
    build_ranking_prompt,
    fallback_ranking,
    gate,
    mechanical_summary,
    parse_ranking_output,
    parse_summary,
    rank_findings,
    sort_for_display,
    stub_rank,
    summarize,
)
from autotsg.values import ContextValue

T0 = datetime(2024, 3, 10, tzinfo=timezone.utc)

MAGEDB = ProductProfile(
    description="MageDB is an analytical in-memory database on Kubernetes nodes."
)


def finding(name, tsg_type="Warning", explanation="", topics=(), actions=()):
    outcomes = []
    if explanation:
        outcomes.append(
            StepOutcome(step="note", kind="explanation", status="Fired", explanation_md=explanation)
        )
    return Finding(
        tsg_id=name,
        version=1,
        tsg_type=tsg_type,
        topics=tuple(topics),
        activated=True,
        outcomes=outcomes,
        actions=list(actions),
        headline=explanation or None,
    )


def action(tsg, server="s1", kind=ActionKind.CANCEL_MANAGEMENT_OPERATION):
    return ActionRequest(
        tsg_id=tsg,
        step="remedy",
        kind=kind,
        parameters={"OperationId": "1", "Reason": "fix"},
        scoping=ExecutionContext({"ServerName": ContextValue.string(server)}),
        detected_at=T0,
        impactful=True,
    )


SNIPPET2_FINDINGS = [
    finding("QueryFailures", explanation="Query cd39 failed after nodes returned data."),
    finding("ProcessCrash", explanation="Frontend crashed out of memory during a merge."),
    finding("ConnectivityFailure", explanation="2352 failed login attempts, frontend not found."),
    finding("LongTransaction", tsg_type="Critical",
            explanation="A session has run a long transaction filling memory for hours."),
]

SNIPPET2_OUTPUT = """LongTransaction, 90%, transaction taking memory
ProcessCrash, 50%, lack of memory caused frontend crash
ConnevityFailure, 20%, crash caused login failures
QueryFailure, 20%, crash causes query failures
"""


def test_parse_printed_ranking_with_typos():
    ranked = parse_ranking_output(SNIPPET2_OUTPUT, SNIPPET2_FINDINGS)
    assert [r.finding.tsg_id for r in ranked] == [
        "LongTransaction",
        "ProcessCrash",
        "ConnectivityFailure",
        "QueryFailures",
    ]
    assert [r.probability for r in ranked] == [0.9, 0.5, 0.2, 0.2]
    assert ranked[0].explanation == "transaction taking memory"


def test_parse_accepts_fractional_probability():
    ranked = parse_ranking_output("QueryFailures, 0.35, plausible", SNIPPET2_FINDINGS[:1])
    assert ranked[0].probability == 0.35


def test_missing_findings_are_appended_with_zero():
    ranked = parse_ranking_output("LongTransaction, 90%, it fits", SNIPPET2_FINDINGS)
    assert len(ranked) == len(SNIPPET2_FINDINGS)
    tail = {r.finding.tsg_id: r for r in ranked[1:]}
    assert all(r.probability == 0.0 for r in tail.values())
    assert all(r.explanation == "(not ranked)" for r in tail.values())


def test_unknown_names_are_ignored_but_all_findings_return():
    completion = "TotallyUnrelatedGuideName, 90%, what\nLongTransaction, 80%, ok\n"
    ranked = parse_ranking_output(completion, SNIPPET2_FINDINGS)
    assert len(ranked) == 4
    assert ranked[0].finding.tsg_id == "LongTransaction"


def test_empty_completion_raises():
    with pytest.raises(RankingUnavailable):
        parse_ranking_output("", SNIPPET2_FINDINGS)
    with pytest.raises(RankingUnavailable):
        parse_ranking_output("no commas here\njust prose\n", SNIPPET2_FINDINGS)


def test_duplicate_lines_first_wins():
    completion = "LongTransaction, 90%, first\nLongTransaction, 10%, second\n"
    ranked = parse_ranking_output(completion, SNIPPET2_FINDINGS[:1] + SNIPPET2_FINDINGS[3:])
    top = [r for r in ranked if r.finding.tsg_id == "LongTransaction"]
    assert len(top) == 1 and top[0].probability == 0.9


def test_ranking_round_trip():
    ranked = parse_ranking_output(SNIPPET2_OUTPUT, SNIPPET2_FINDINGS)
    serialized = "\n".join(
        f"{r.finding.tsg_id}, {round(r.probability * 100)}%, {r.explanation}" for r in ranked
    )
    again = parse_ranking_output(serialized, SNIPPET2_FINDINGS)
    assert [(r.finding.tsg_id, r.probability, r.explanation) for r in again] == [
        (r.finding.tsg_id, r.probability, r.explanation) for r in ranked
    ]


# -- prompt -------------------------------------------------------------------

def test_prompt_structure():
    prompt = build_ranking_prompt(MAGEDB, "interpreter cannot be instantiated", SNIPPET2_FINDINGS)
    assert "ALL findings need to be returned." in prompt
    assert "CSV format" in prompt
    assert "EXAMPLE:" in prompt
    # one-shot example precedes the real input
    assert prompt.index("EXAMPLE:") < prompt.index("interpreter cannot be instantiated")
    for f in SNIPPET2_FINDINGS:
        assert f"- **Name:** {f.tsg_id}" in prompt
    assert prompt.rstrip().endswith("Output:")


def test_prompt_empty_problem_statement_placeholder():
    prompt = build_ranking_prompt(MAGEDB, "", SNIPPET2_FINDINGS[:1])
    assert NO_PROBLEM_STATEMENT in prompt


def test_prompt_truncates_to_budget():
    big = finding("Huge", explanation="word " * 4000)
    prompt = build_ranking_prompt(MAGEDB, "problem", [big], budget=1000)
    block = prompt.split("- **Name:** Huge\n", 1)[1].split("\n\nOutput:")[0]
    explanation_line = [l for l in block.splitlines() if l.startswith("Explanation:")][0]
    assert len(explanation_line) <= 1000 + len("Explanation: ")
    assert "…(truncated)" in explanation_line


# -- gate ----------------------------------------------------------------------

def test_gate_thresholds_inclusive():
    items = parse_ranking_output(
        "A, 70%, execute\nB, 30%, propose\nC, 10%, display\nD, 9%, hide\n",
        [finding("A"), finding("B"), finding("C"), finding("D")],
    )
    ranked, _ = gate(items)
    by_id = {r.finding.tsg_id: r for r in ranked}
    assert by_id["A"].actions_gate == "Execute"
    assert by_id["B"].actions_gate == "Propose"
    assert by_id["C"].actions_gate == "Skip" and by_id["C"].display
    assert not by_id["D"].display


def test_gate_conflict_suppression():
    long_txn = finding(
        "LongTransaction", tsg_type="Critical", explanation="kill the transaction",
        actions=[action("LongTransaction")],
    )
    crash = finding(
        "ProcessCrash", explanation="add resources",
        actions=[action("ProcessCrash")],
    )
    ranked = parse_ranking_output(
        "LongTransaction, 90%, cause\nProcessCrash, 50%, symptom\n", [long_txn, crash]
    )
    ranked, plan = gate(ranked)
    decisions = {p.tsg_id: p for p in plan}
    assert decisions["LongTransaction"].decision == "execute"
    assert decisions["ProcessCrash"].decision == "suppressed"
    assert decisions["ProcessCrash"].suppressed_by == "LongTransaction/remedy"


def test_gate_no_conflict_across_scoping_values():
    a = finding("A", actions=[action("A", server="s1")])
    b = finding("B", actions=[action("B", server="s2")])
    ranked = parse_ranking_output("A, 90%, x\nB, 80%, y\n", [a, b])
    _, plan = gate(ranked)
    assert [p.decision for p in plan] == ["execute", "execute"]


def test_gate_all_zero_probabilities_skip_everything():
    ranked = [dataclasses.replace(r) for r in fallback_ranking([finding("A"), finding("B")])]
    for r in ranked:
        r.probability = 0.0
    ranked, plan = gate(ranked)
    assert all(not r.display for r in ranked)
    assert all(r.actions_gate == "Skip" for r in ranked)


@given(st.floats(min_value=0, max_value=1), st.floats(min_value=0, max_value=1))
def test_gate_monotone(p_low, p_high):
    if p_low > p_high:
        p_low, p_high = p_high, p_low
    order = {"Skip": 0, "Propose": 1, "Execute": 2}
    low = parse_ranking_output(f"A, {p_low}, x", [finding("A")])
    high = parse_ranking_output(f"A, {p_high}, x", [finding("A")])
    low, _ = gate(low)
    high, _ = gate(high)
    assert order[high[0].actions_gate] >= order[low[0].actions_gate]
    assert high[0].display >= low[0].display


def test_sort_for_display_total_order():
    items = parse_ranking_output(
        "A, 50%, x\nB, 50%, y\nC, 90%, z\n",
        [finding("A", tsg_type="Informational"), finding("B", tsg_type="Critical"), finding("C")],
    )
    ordered = sort_for_display(items)
    assert [r.finding.tsg_id for r in ordered] == ["C", "B", "A"]


# -- stub ---------------------------------------------------------------------

def test_stub_overlap_ordering():
    problem = "upgrade stuck on server"
    fs = [
        finding("UpgradeGuide", explanation="upgrade operations on the server are stuck",
                topics=("upgrade",)),
        finding("BackupGuide", explanation="nightly backups missed their window",
                topics=("backup",)),
    ]
    output = stub_rank(problem, fs)
    lines = output.strip().splitlines()
    assert lines[0].startswith("UpgradeGuide, 90%")
    assert lines[1].startswith("BackupGuide, 0%")


def test_stub_neutral_when_nothing_overlaps():
    fs = [finding("A", explanation="xyzzy"), finding("B", explanation="plugh")]
    output = stub_rank("completely unrelated words", fs)
    assert all(", 50%," in line for line in output.strip().splitlines())


def test_stub_tie_break_type_then_name():
    fs = [
        finding("Zeta", tsg_type="Critical", explanation="noop"),
        finding("Alpha", tsg_type="Warning", explanation="noop"),
        finding("Beta", tsg_type="Critical", explanation="noop"),
    ]
    output = stub_rank("nothing shared", fs)
    names = [line.split(",")[0] for line in output.strip().splitlines()]
    assert names == ["Beta", "Zeta", "Alpha"]


def test_stub_client_is_pure(snippet1_doc):
    client = StubRankerClient()
    prompt = build_ranking_prompt(MAGEDB, "interpreter error", SNIPPET2_FINDINGS)
    assert client.complete(prompt) == client.complete(prompt)
    ranked = parse_ranking_output(client.complete(prompt), SNIPPET2_FINDINGS)
    assert len(ranked) == 4


def test_rank_findings_fallback_on_garbage():
    class Garbage:
        def complete(self, prompt):
            return "null"

    ranked, used_fallback = rank_findings(MAGEDB, "p", SNIPPET2_FINDINGS, Garbage())
    assert used_fallback
    assert [r.finding.tsg_id for r in sort_for_display(ranked)][0] == "LongTransaction"
    # fallback confidence never reaches the execute threshold
    assert all(r.probability < DEFAULT_CONFIG.execute_threshold for r in ranked)


# -- summaries -----------------------------------------------------------------

SNIPPET3_TEXT = """Problem Description
The MageDB analytical database system gives the customer an error saying
"the interpreter cannot be instantiated." This is a new problem.

Findings
- A long transaction has been detected, which is taking up memory and is the root cause of the issue.
- A process crash (frontend) has been detected, which has been caused by not having enough memory.
- A connectivity failure has been detected, which is likely a consequence of the crash.
- Query failures have been detected, which are likely a consequence of the crash.

Automatic Actions
- The long-running transaction has been killed.

Suggested Actions
- Request the customer to rework the workload to reduce memory consumption.
- Consider upgrading the system with more memory to prevent future process crashes.
- Monitor the system to ensure the problem is resolved.
"""


def test_parse_summary_four_sections():
    doc = parse_summary(SNIPPET3_TEXT)
    assert doc is not None
    assert "interpreter cannot be instantiated" in doc.problem_statement
    assert doc.findings_narrative.count("- ") == 4
    assert doc.automatic_actions == ["The long-running transaction has been killed."]
    assert len(doc.suggested_actions) == 3


def test_parse_summary_requires_all_headings():
    assert parse_summary("Problem Description\nonly one") is None


def test_summarize_falls_back_on_garbage_client():
    class Garbage:
        def complete(self, prompt):
            return "not a summary at all"

    ranked, _ = gate(parse_ranking_output("A, 80%, reason", [finding("A")]))
    doc = summarize(ranked, ["did a thing"], ["try another"], "the problem", Garbage())
    assert doc.problem_statement == "the problem"
    assert doc.automatic_actions == ["did a thing"]
    assert doc.suggested_actions == ["try another"]
    assert "A" in doc.findings_narrative


def test_mechanical_summary_no_findings():
    doc = mechanical_summary([], [], [], "")
    assert doc.problem_statement == NO_PROBLEM_STATEMENT
    assert "No findings" in doc.findings_narrative
    assert doc.automatic_actions == [] and doc.suggested_actions == []


def test_stub_output_matches_golden():
    import os
    from conftest import GOLDEN

    output = stub_rank(
        "the interpreter cannot be instantiated after submitting queries",
        SNIPPET2_FINDINGS,
    )
    path = GOLDEN / "stub_rank.golden"
    if os.environ.get("UPDATE_GOLDENS") or not path.exists():
        path.write_text(output, encoding="utf-8")
    assert output == path.read_text(encoding="utf-8")
    # format contract: every finding exactly once, percent column parses
    ranked = parse_ranking_output(output, SNIPPET2_FINDINGS)
    assert sorted(r.finding.tsg_id for r in ranked) == sorted(
        f.tsg_id for f in SNIPPET2_FINDINGS
    )
