"""Diagnostic response assembly, audience display policy, and rendering.

One response shape serves every caller; the audience policy decides what
goes into it. Customer-facing responses never carry query text or raw
table payloads, only curated explanation markdown. The JSON serialization
here is the published contract (see schemas/diagnostic_response.schema.json)
and is byte-deterministic: the CLI and the HTTP service emit the same bytes
for the same inputs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

from .actions import IncidentRecord, TicketRecord
from .context import ExecutionContext
from .executor import Finding
from .model import AudienceTag
from .ranking import PlannedAction, RankedFinding, SummaryDoc, sort_for_display


@dataclass(frozen=True)
class DisplayPolicy:
    include_query_text: bool
    include_tables: bool
    suppressed_section: bool
    group_by_topic: bool


AUDIENCE_POLICY: Dict[AudienceTag, DisplayPolicy] = {
    AudienceTag.CUSTOMER_VISIBLE: DisplayPolicy(False, False, False, False),
    AudienceTag.SUPPORT_TICKET: DisplayPolicy(False, True, False, False),
    AudienceTag.INTERNAL_TICKET: DisplayPolicy(True, True, True, False),
    AudienceTag.INTERNAL_ON_DEMAND: DisplayPolicy(True, True, True, True),
    AudienceTag.SCHEDULE: DisplayPolicy(True, True, True, False),
}


def session_id(base: ExecutionContext, audience: AudienceTag, tsg_ids: Sequence[str],
               problem_statement: str, now_text: str) -> str:
    digest = hashlib.sha256(
        "|".join([base.canonical(), audience.value, ",".join(sorted(tsg_ids)),
                  problem_statement, now_text]).encode("utf-8")
    ).hexdigest()
    return digest[:16]


def _outcome_view(outcome, policy: DisplayPolicy) -> dict:
    data = outcome.to_dict()
    if not policy.include_query_text:
        data.pop("query_text", None)
    if not policy.include_tables:
        data.pop("table", None)
    return data


def _finding_view(item: RankedFinding, policy: DisplayPolicy) -> dict:
    finding = item.finding
    view = {
        "tsg_id": finding.tsg_id,
        "version": finding.version,
        "tsg_type": finding.tsg_type,
        "topics": list(finding.topics),
        "probability": item.probability,
        "ranking_explanation": item.explanation,
        "actions_gate": item.actions_gate,
        "headline": finding.headline,
        "outcomes": [_outcome_view(o, policy) for o in finding.outcomes],
    }
    if finding.called_by:
        view["called_by"] = finding.called_by
    if finding.error:
        view["error"] = finding.error
    return view


def assemble_response(
    *,
    base: ExecutionContext,
    audience: AudienceTag,
    findings: Sequence[Finding],
    ranked: Sequence[RankedFinding],
    plan: Sequence[PlannedAction],
    action_results: Sequence[dict],
    summary: SummaryDoc,
    problem_statement: str,
    ticket: Optional[TicketRecord],
    incidents: Sequence[IncidentRecord],
    now_text: str,
) -> dict:
    policy = AUDIENCE_POLICY[audience]
    ordered = sort_for_display(list(ranked))
    displayed = [r for r in ordered if r.display]
    hidden = [r for r in ordered if not r.display]

    response: dict = {
        "session_id": session_id(
            base, audience, [f.tsg_id for f in findings], problem_statement, now_text
        ),
        "audience": audience.value,
        "generated_at": now_text,
        "base_context": base.to_json_obj(),
        "problem_statement": problem_statement,
        "evaluated_tsgs": len(findings),
        "activated_tsgs": sum(1 for f in findings if f.activated),
        "summary": summary.to_dict(),
        "findings": [_finding_view(r, policy) for r in displayed],
    }
    if policy.suppressed_section:
        response["suppressed"] = [
            {"tsg_id": r.finding.tsg_id, "probability": r.probability} for r in hidden
        ]
    if policy.group_by_topic:
        groups: Dict[str, List[str]] = {}
        for item in displayed:
            topics = list(item.finding.topics) or ["general"]
            for topic in topics:
                groups.setdefault(topic, []).append(item.finding.tsg_id)
        response["groups"] = [
            {"topic": topic, "tsg_ids": ids} for topic, ids in sorted(groups.items())
        ]
    response["actions"] = list(action_results)
    response["ticket"] = ticket.to_dict() if ticket is not None else None
    response["incidents"] = [record.to_dict() for record in incidents]
    return response


def response_to_json(response: dict) -> str:
    """The canonical byte form of a response (CLI --json and HTTP body)."""
    return json.dumps(response, indent=2, ensure_ascii=False) + "\n"


# ---------------------------------------------------------------------------
# Human rendering (CLI default output)

def _render_table_md(table: dict) -> List[str]:
    headers = [c["name"] for c in table["columns"]]
    lines = ["| " + " | ".join(headers) + " |"]
    lines.append("| " + " | ".join("---" for _ in headers) + " |")
    for row in table["rows"]:
        lines.append("| " + " | ".join(str(cell) for cell in row) + " |")
    return lines


def render_markdown(response: dict) -> str:
    lines: List[str] = []
    lines.append(f"# Diagnostic report ({response['audience']})")
    lines.append("")
    summary = response["summary"]
    lines.append("## Summary")
    lines.append("")
    lines.append("### Problem Description")
    lines.append(summary["problem_statement"])
    lines.append("")
    lines.append("### Findings")
    lines.append(summary["findings"])
    lines.append("")
    lines.append("### Automatic Actions")
    lines.extend([f"- {a}" for a in summary["automatic_actions"]] or ["- (none)"])
    lines.append("")
    lines.append("### Suggested Actions")
    lines.extend([f"- {a}" for a in summary["suggested_actions"]] or ["- (none)"])
    lines.append("")

    if not response["findings"]:
        lines.append("_No findings to display._")
        lines.append("")
    for finding in response["findings"]:
        lines.append(
            f"## {finding['tsg_id']} · {finding['tsg_type']} · "
            f"{finding['probability']:.0%}"
        )
        if finding.get("ranking_explanation"):
            lines.append(f"_{finding['ranking_explanation']}_")
        lines.append("")
        for outcome in finding["outcomes"]:
            status = outcome["status"]
            if status in ("Deduplicated",):
                continue
            badge = f"**[{outcome['kind']}:{outcome['step']}]** ({status})"
            lines.append(badge)
            if outcome.get("explanation"):
                lines.append("")
                lines.append(outcome["explanation"].rstrip())
            if outcome.get("table") and outcome["table"]["rows"]:
                lines.append("")
                lines.extend(_render_table_md(outcome["table"]))
            if outcome.get("query_text"):
                lines.append("")
                lines.append("```kusto")
                lines.append(outcome["query_text"].rstrip())
                lines.append("```")
            lines.append("")

    if response.get("actions"):
        lines.append("## Actions")
        for item in response["actions"]:
            action = item["action"]
            decision = item["decision"]
            extra = f" (suppressed by {item['suppressed_by']})" if item.get("suppressed_by") else ""
            result = f" → {item['result']}" if item.get("result") else ""
            lines.append(
                f"- {decision.upper()}{extra}: {action['kind']} from "
                f"{action['tsg_id']}/{action['step']}{result}"
            )
        lines.append("")
    if response.get("ticket"):
        ticket = response["ticket"]
        lines.append(
            f"Ticket {ticket['ticket_id']}: severity {ticket['severity']}, "
            f"owned by {ticket['owning_team']}"
        )
        for note in ticket["notes"]:
            lines.append(f"  - {note}")
        lines.append("")
    if response.get("incidents"):
        lines.append("## Incidents")
        for record in response["incidents"]:
            lines.append(
                f"- {record['incident_id']} [{record['state']}] {record['title']} "
                f"(last detected {record['last_detected_at']})"
            )
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"
