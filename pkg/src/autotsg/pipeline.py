"""End-to-end diagnostic pipeline shared by the CLI and the HTTP service.

Run every enabled guide against the base context, rank the activated
findings, gate and execute the surviving actions, summarize, and assemble
the audience-filtered response. Deterministic given a stub or replay
ranker and a virtual clock.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

from .actions import (
    ActionRequest,
    IncidentManager,
    IncidentRecord,
    OperationQueue,
    TicketRecord,
    apply_ticket_action,
    TicketActionError,
)
from .clock import Clock
from .config import DEFAULT_CONFIG, RuntimeConfig
from .context import ExecutionContext
from .executor import run_all
from .model import ActionKind, AudienceTag, AutoTsgDoc, TICKET_ACTION_KINDS
from .query import SourceRegistry
from .ranking import (
    PlannedAction,
    ProductProfile,
    RankerClient,
    gate,
    rank_findings,
    summarize,
)
from .registry import TsgRegistry
from .render import assemble_response
from .values import render_datetime


@dataclass
class DiagnosticRequest:
    base: ExecutionContext
    audience: AudienceTag
    problem_statement: str = ""
    ticket: Optional[TicketRecord] = None
    injected_docs: List[AutoTsgDoc] = field(default_factory=list)


def _action_description(request: ActionRequest, result: str = "") -> str:
    params = ", ".join(f"{k}={v}" for k, v in sorted(request.parameters.items()))
    text = f"{request.kind.value} ({params}) from {request.tsg_id}/{request.step}"
    return f"{text}: {result}" if result else text


def run_diagnostics(
    request: DiagnosticRequest,
    *,
    docs: Sequence[AutoTsgDoc],
    sources: SourceRegistry,
    clock: Clock,
    client: Optional[RankerClient],
    profile: ProductProfile,
    incidents: IncidentManager,
    queue: OperationQueue,
    registry: Optional[TsgRegistry] = None,
    config: RuntimeConfig = DEFAULT_CONFIG,
) -> dict:
    now = clock.now()
    now_text = render_datetime(now)

    all_docs = list(docs) + list(request.injected_docs)
    findings = run_all(
        all_docs,
        request.base,
        request.audience,
        clock,
        sources,
        registry=registry,
        config=config,
    )

    ranked, _used_fallback = rank_findings(
        profile,
        request.problem_statement,
        findings,
        client,
        budget=config.finding_budget,
    )
    ranked, plan = gate(ranked, config, profile)

    executed_descriptions: List[str] = []
    proposed_descriptions: List[str] = []
    action_results: List[dict] = []
    created_incidents: List[IncidentRecord] = []

    type_by_id = {doc.id: doc.metadata.tsg_type.value for doc in all_docs}
    ticket = request.ticket

    for planned in plan:
        entry = planned.to_dict()
        if planned.decision == "execute":
            result_note = _execute_action(
                planned,
                ticket,
                incidents,
                queue,
                now,
                type_by_id,
                created_incidents,
                config,
            )
            entry["result"] = result_note
            if result_note.startswith("rejected"):
                executed = False
            else:
                executed = True
            if executed:
                executed_descriptions.append(
                    _action_description(planned.request, result_note)
                )
        elif planned.decision == "propose":
            proposed_descriptions.append(_action_description(planned.request))
        action_results.append(entry)

    summary = summarize(
        ranked,
        executed_descriptions,
        proposed_descriptions,
        request.problem_statement,
        client,
    )

    return assemble_response(
        base=request.base,
        audience=request.audience,
        findings=findings,
        ranked=ranked,
        plan=plan,
        action_results=action_results,
        summary=summary,
        problem_statement=request.problem_statement,
        ticket=ticket,
        incidents=created_incidents,
        now_text=now_text,
    )


def _execute_action(
    planned: PlannedAction,
    ticket: Optional[TicketRecord],
    incidents: IncidentManager,
    queue: OperationQueue,
    now,
    type_by_id,
    created_incidents: List[IncidentRecord],
    config: RuntimeConfig,
) -> str:
    request = planned.request
    if request.kind in TICKET_ACTION_KINDS:
        try:
            apply_ticket_action(request, ticket, config)
        except TicketActionError as exc:
            return f"rejected ({exc})"
        if request.kind is ActionKind.INCREASE_SEVERITY:
            return f"ticket severity now {ticket.severity}"
        return f"ticket routed to {ticket.owning_team}"
    if request.kind is ActionKind.CREATE_INCIDENT:
        result = incidents.create_incident(
            request, now, tsg_type=type_by_id.get(request.tsg_id, "Warning")
        )
        if result.decision == "created" and result.incident:
            created_incidents.append(result.incident)
            return f"incident {result.incident.incident_id} created"
        if result.decision == "dedup_skipped" and result.incident:
            return f"duplicate of {result.incident.incident_id}; detection window refreshed"
        return "absorbed by incident quota back-off"
    # production operations go through the throttled queue
    outcome = queue.enqueue(request)
    if outcome.decision == "accepted":
        queue.run_pending(now)
        return "executed via operation queue"
    if outcome.decision == "coalesced":
        return f"coalesced into {outcome.coalesced_into}"
    return f"rejected ({outcome.reason})"
