"""Action execution: operation queue, incident lifecycle, ticket updates.

The queue throttles impactful operations (same scoping values within the
cooldown window are rejected) and coalesces conflicting pending operations
(earliest detection wins; a configured supersedes relation lets a broader
pending operation absorb a narrower incoming one). Executed operations are
appended to an actions telemetry table so guides can query them back.

Incidents are deduplicated per (guide, scoping values) over a moving
window the length of the time-to-live; repeated detections refresh the
window, and expiry auto-mitigates once the condition stops refreshing.
Each guide also has an incident quota per tumbling window; exhausting it
creates a single outage-tracking incident and absorbs further detections.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .config import DEFAULT_CONFIG, RuntimeConfig
from .context import ExecutionContext
from .model import ActionKind, TICKET_ACTION_KINDS
from .query import Column, Table, TableStore
from .values import Dtype, render_datetime


@dataclass
class ActionRequest:
    """One emitted action, fully substituted, with its scoping identity."""

    tsg_id: str
    step: str
    kind: ActionKind
    parameters: Dict[str, str]
    scoping: ExecutionContext
    detected_at: datetime
    impactful: bool = False
    ttl: Optional[timedelta] = None

    def scoping_key(self) -> str:
        return self.scoping.canonical()

    def to_dict(self) -> dict:
        return {
            "tsg_id": self.tsg_id,
            "step": self.step,
            "kind": self.kind.value,
            "parameters": dict(self.parameters),
            "scoping": self.scoping.to_json_obj(),
            "detected_at": render_datetime(self.detected_at),
            "impactful": self.impactful,
        }


# ---------------------------------------------------------------------------
# Operation queue

ACTIONS_TABLE = "ActionsLog"
_ACTIONS_COLUMNS = [
    Column("TimeStamp", Dtype.DATETIME),
    Column("ActionKind", Dtype.STRING),
    Column("TsgId", Dtype.STRING),
    Column("StepName", Dtype.STRING),
    Column("ScopingValues", Dtype.STRING),
    Column("Status", Dtype.STRING),
]


@dataclass
class EnqueueResult:
    decision: str  # accepted | coalesced | rejected
    reason: Optional[str] = None
    coalesced_into: Optional[str] = None

    def to_dict(self) -> dict:
        out = {"decision": self.decision}
        if self.reason:
            out["reason"] = self.reason
        if self.coalesced_into:
            out["coalesced_into"] = self.coalesced_into
        return out


class ProductionInterface:
    """Where production operations land; the built-in one only records them."""

    def __init__(self) -> None:
        self.applied: List[ActionRequest] = []

    def apply(self, request: ActionRequest) -> None:
        self.applied.append(request)


class OperationQueue:
    """FIFO queue with impact throttling and conflict coalescing."""

    def __init__(
        self,
        config: RuntimeConfig = DEFAULT_CONFIG,
        *,
        production: Optional[ProductionInterface] = None,
        telemetry: Optional[TableStore] = None,
    ):
        self.config = config
        self.production = production or ProductionInterface()
        self.telemetry = telemetry
        self.pending: List[ActionRequest] = []
        self.executed: List[Tuple[datetime, ActionRequest]] = []
        if telemetry is not None:
            try:
                telemetry.get(ACTIONS_TABLE)
            except Exception:
                telemetry.register(Table(ACTIONS_TABLE, list(_ACTIONS_COLUMNS), []))

    def enqueue(self, request: ActionRequest) -> EnqueueResult:
        if not isinstance(request.kind, ActionKind):
            return EnqueueResult("rejected", reason="unknown-kind")
        if request.kind in TICKET_ACTION_KINDS or request.kind in (
            ActionKind.CREATE_INCIDENT,
            ActionKind.CALL_AUTO_TSG,
        ):
            return EnqueueResult(
                "rejected", reason=f"{request.kind.value} is not a queued production operation"
            )

        if request.impactful:
            horizon = request.detected_at - self.config.impact_cooldown
            for when, done in self.executed:
                if (
                    done.impactful
                    and done.scoping_key() == request.scoping_key()
                    and when > horizon
                ):
                    return EnqueueResult("rejected", reason="cooldown")

        for pending in self.pending:
            if pending.scoping_key() != request.scoping_key():
                continue
            if pending.kind == request.kind:
                return EnqueueResult("coalesced", coalesced_into=f"{pending.tsg_id}/{pending.step}")
            absorbed = self.config.supersedes.get(pending.kind, frozenset())
            if request.kind in absorbed:
                return EnqueueResult("coalesced", coalesced_into=f"{pending.tsg_id}/{pending.step}")

        self.pending.append(request)
        return EnqueueResult("accepted")

    def run_pending(self, now: datetime) -> List[ActionRequest]:
        """Execute pending operations in detection order; log to telemetry."""
        ran: List[ActionRequest] = []
        for request in sorted(self.pending, key=lambda r: r.detected_at):
            self.production.apply(request)
            self.executed.append((now, request))
            self._log(now, request, "Executed")
            ran.append(request)
        self.pending = []
        return ran

    def _log(self, now: datetime, request: ActionRequest, status: str) -> None:
        if self.telemetry is None:
            return
        self.telemetry.append_rows(
            ACTIONS_TABLE,
            [
                (
                    now,
                    request.kind.value,
                    request.tsg_id,
                    request.step,
                    request.scoping_key(),
                    status,
                )
            ],
        )


# ---------------------------------------------------------------------------
# Incidents

@dataclass
class IncidentRecord:
    incident_id: str
    tsg_id: str
    scoping: str
    title: str
    owning_service: str
    owning_team: str
    severity: str
    created_at: datetime
    last_detected_at: datetime
    ttl: timedelta
    state: str = "Active"  # Active | Mitigated
    details: str = ""
    outage_tracking: bool = False
    mitigated_at: Optional[datetime] = None

    def to_dict(self) -> dict:
        from .values import render_timespan

        out = {
            "incident_id": self.incident_id,
            "tsg_id": self.tsg_id,
            "scoping": self.scoping,
            "title": self.title,
            "owning_service": self.owning_service,
            "owning_team": self.owning_team,
            "severity": self.severity,
            "created_at": render_datetime(self.created_at),
            "last_detected_at": render_datetime(self.last_detected_at),
            "ttl": render_timespan(self.ttl),
            "state": self.state,
            "outage_tracking": self.outage_tracking,
        }
        if self.details:
            out["details"] = self.details
        if self.mitigated_at is not None:
            out["mitigated_at"] = render_datetime(self.mitigated_at)
        return out


@dataclass
class QuotaState:
    tsg_id: str
    window_start: datetime
    created: int = 0
    backed_off: bool = False


@dataclass
class CreateIncidentResult:
    decision: str  # created | dedup_skipped | quota_backoff
    incident: Optional[IncidentRecord] = None

    def to_dict(self) -> dict:
        out = {"decision": self.decision}
        if self.incident is not None:
            out["incident_id"] = self.incident.incident_id
        return out


class IncidentStore:
    """In-memory incident records with an append-only JSON-lines journal."""

    def __init__(self, journal_path: Optional[Path] = None):
        self.records: Dict[str, IncidentRecord] = {}
        self.journal_path = Path(journal_path) if journal_path else None
        self._counter = 0

    def new_id(self) -> str:
        self._counter += 1
        return f"INC-{self._counter:05d}"

    def add(self, record: IncidentRecord) -> None:
        self.records[record.incident_id] = record
        self._journal(record)

    def touch(self, record: IncidentRecord) -> None:
        self._journal(record)

    def _journal(self, record: IncidentRecord) -> None:
        if self.journal_path is None:
            return
        with self.journal_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")

    def active(self) -> List[IncidentRecord]:
        return [r for r in self.records.values() if r.state == "Active"]

    def all_records(self) -> List[IncidentRecord]:
        return list(self.records.values())

    def find_live(self, tsg_id: str, scoping: str, now: datetime) -> Optional[IncidentRecord]:
        for record in self.records.values():
            if (
                record.tsg_id == tsg_id
                and record.scoping == scoping
                and not record.outage_tracking
                and now < record.last_detected_at + record.ttl
            ):
                return record
        return None


# Severity assigned to incidents by the sourcing guide's type.
_TYPE_SEVERITY = {"Critical": "A", "Warning": "B", "Informational": "C"}


class IncidentManager:
    def __init__(self, store: IncidentStore, config: RuntimeConfig = DEFAULT_CONFIG):
        self.store = store
        self.config = config
        self.quota: Dict[str, QuotaState] = {}

    def create_incident(
        self,
        request: ActionRequest,
        now: datetime,
        *,
        tsg_type: str = "Warning",
        details: str = "",
    ) -> CreateIncidentResult:
        ttl = request.ttl or self.config.default_incident_ttl
        scoping = request.scoping_key()

        existing = self.store.find_live(request.tsg_id, scoping, now)
        if existing is not None:
            existing.last_detected_at = now
            if details:
                existing.details = details
            self.store.touch(existing)
            return CreateIncidentResult("dedup_skipped", existing)

        state = self.quota.get(request.tsg_id)
        if state is None or now >= state.window_start + self.config.quota_window:
            state = QuotaState(request.tsg_id, window_start=now)
            self.quota[request.tsg_id] = state

        if state.created >= self.config.incident_quota:
            if not state.backed_off:
                state.backed_off = True
                outage = IncidentRecord(
                    incident_id=self.store.new_id(),
                    tsg_id=request.tsg_id,
                    scoping=f'{{"__quota__":["string","{request.tsg_id}"]}}',
                    title=(
                        f"Detection spike for {request.tsg_id}: incident quota "
                        f"({self.config.incident_quota}) exhausted in the current window"
                    ),
                    owning_service=request.parameters.get("OwningService", ""),
                    owning_team=request.parameters.get("OwningTeam", ""),
                    severity="A",
                    created_at=now,
                    last_detected_at=now,
                    ttl=self.config.quota_window,
                    outage_tracking=True,
                )
                self.store.add(outage)
                return CreateIncidentResult("quota_backoff", outage)
            return CreateIncidentResult("quota_backoff", None)

        record = IncidentRecord(
            incident_id=self.store.new_id(),
            tsg_id=request.tsg_id,
            scoping=scoping,
            title=request.parameters.get("Title", ""),
            owning_service=request.parameters.get("OwningService", ""),
            owning_team=request.parameters.get("OwningTeam", ""),
            severity=_TYPE_SEVERITY.get(tsg_type, "B"),
            created_at=now,
            last_detected_at=now,
            ttl=ttl,
            details=details,
        )
        self.store.add(record)
        state.created += 1
        return CreateIncidentResult("created", record)

    def expire_incidents(self, now: datetime) -> List[str]:
        """Mitigate every active incident whose TTL elapsed; idempotent."""
        mitigated: List[str] = []
        for record in self.store.active():
            if now >= record.last_detected_at + record.ttl:
                record.state = "Mitigated"
                record.mitigated_at = now
                self.store.touch(record)
                mitigated.append(record.incident_id)
        return mitigated


# ---------------------------------------------------------------------------
# Tickets

@dataclass
class TicketRecord:
    ticket_id: str
    severity: str
    owning_team: str
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "ticket_id": self.ticket_id,
            "severity": self.severity,
            "owning_team": self.owning_team,
            "notes": list(self.notes),
        }


class TicketActionError(RuntimeError):
    pass


def apply_ticket_action(
    request: ActionRequest,
    ticket: Optional[TicketRecord],
    config: RuntimeConfig = DEFAULT_CONFIG,
) -> TicketRecord:
    """Apply IncreaseSeverity/RouteTicket to the session's ambient ticket."""
    if request.kind not in TICKET_ACTION_KINDS:
        raise TicketActionError(f"{request.kind.value} is not a ticket action")
    if ticket is None:
        raise TicketActionError("no-ticket-context")

    if request.kind is ActionKind.INCREASE_SEVERITY:
        wanted = request.parameters["NewSeverity"]
        if config.severity_rank(wanted) < config.severity_rank(ticket.severity):
            ticket.notes.append(
                f"severity raised {ticket.severity} -> {wanted} by {request.tsg_id}/{request.step}"
            )
            ticket.severity = wanted
        else:
            ticket.notes.append(
                f"severity change to {wanted} ignored (already {ticket.severity}); "
                "severity only ever increases"
            )
    else:
        team = request.parameters["TeamName"]
        ticket.notes.append(
            f"routed from {ticket.owning_team!r} to {team!r} by {request.tsg_id}/{request.step}"
        )
        ticket.owning_team = team
    return ticket
