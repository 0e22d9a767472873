"""Scheduled trigger driver on an injectable clock.

Each scheduled trigger ticks at its configured frequency. A tick builds
the two-timestamp base context {StartTime, TimeStamp} where StartTime is
the previous tick (first tick: one frequency back), so consecutive windows
tile time exactly and the queries stay deterministic over any timeline.
Missed ticks collapse into one catch-up tick with a widened window.

Trigger results split into ensembles by the scoping key values; each
ensemble runs the downstream subtree in its own session (one incident per
ensemble, resource written once, every matching row listed).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Dict, List, Optional, Sequence, Tuple

from .actions import ActionRequest, IncidentManager, OperationQueue
from .clock import Clock
from .config import DEFAULT_CONFIG, RuntimeConfig
from .context import ExecutionContext
from .executor import ExecutionSession, Status
from .model import ActionKind, AudienceTag, AutoTsgDoc, TICKET_ACTION_KINDS
from .query import SourceRegistry
from .values import ContextValue


@dataclass
class ScheduleState:
    tsg_id: str
    trigger_index: int
    frequency: timedelta
    last_tick: Optional[datetime] = None
    next_due: Optional[datetime] = None

    def due(self, now: datetime) -> bool:
        return self.next_due is not None and now >= self.next_due


class ScheduleDriver:
    """Thin real-time loop over Scheduler.tick for serve mode."""

    def __init__(self, scheduler: "Scheduler", poll_seconds: float = 1.0):
        import threading

        self.scheduler = scheduler
        self.poll_seconds = poll_seconds
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=5)

    def _run(self) -> None:
        import logging

        log = logging.getLogger("autotsg.scheduler")
        while not self._stop.wait(self.poll_seconds):
            report = self.scheduler.tick()
            for entry in report.entries:
                log.info("tick %s", entry.to_dict())
            for incident_id in report.mitigated:
                log.info("mitigated %s", incident_id)


def compute_window(state: ScheduleState, now: datetime) -> ExecutionContext:
    """Scheduled base context: {StartTime: previous tick, TimeStamp: now}."""
    start = state.last_tick if state.last_tick is not None else now - state.frequency
    return ExecutionContext(
        {
            "StartTime": ContextValue.dt(start),
            "TimeStamp": ContextValue.dt(now),
        }
    )


def split_by_scoping_keys(
    contexts: Sequence[ExecutionContext], scoping: Sequence[str]
) -> List[Tuple[str, List[ExecutionContext]]]:
    """Group contexts into ensembles by their scoping value tuple.

    Group order is first appearance; an empty scoping list yields a single
    ensemble holding everything.
    """
    groups: Dict[str, List[ExecutionContext]] = {}
    order: List[str] = []
    for ctx in contexts:
        key = ctx.project(scoping).canonical()
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(ctx)
    return [(key, groups[key]) for key in order]


@dataclass
class TsgTickReport:
    tsg_id: str
    trigger_index: int
    window: dict
    fired: bool = False
    ensembles: int = 0
    incidents_created: List[str] = field(default_factory=list)
    incidents_deduped: List[str] = field(default_factory=list)
    incidents_backed_off: int = 0
    actions_accepted: int = 0
    actions_coalesced: int = 0
    actions_rejected: int = 0
    errors: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "tsg_id": self.tsg_id,
            "trigger_index": self.trigger_index,
            "window": self.window,
            "fired": self.fired,
            "ensembles": self.ensembles,
            "incidents_created": self.incidents_created,
            "incidents_deduped": self.incidents_deduped,
            "incidents_backed_off": self.incidents_backed_off,
            "actions_accepted": self.actions_accepted,
            "actions_coalesced": self.actions_coalesced,
            "actions_rejected": self.actions_rejected,
            "errors": self.errors,
        }


@dataclass
class TickReport:
    at: datetime
    entries: List[TsgTickReport] = field(default_factory=list)
    mitigated: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        from .values import render_datetime

        return {
            "at": render_datetime(self.at),
            "entries": [e.to_dict() for e in self.entries],
            "mitigated": self.mitigated,
        }


class Scheduler:
    def __init__(
        self,
        docs: Sequence[AutoTsgDoc],
        clock: Clock,
        sources: SourceRegistry,
        incidents: IncidentManager,
        queue: OperationQueue,
        config: RuntimeConfig = DEFAULT_CONFIG,
    ):
        self.clock = clock
        self.sources = sources
        self.incidents = incidents
        self.queue = queue
        self.config = config
        self.docs: Dict[str, AutoTsgDoc] = {}
        self.states: List[ScheduleState] = []
        for doc in docs:
            self.register(doc)

    def register(self, doc: AutoTsgDoc) -> None:
        self.docs[doc.id] = doc
        start = self.clock.now()
        for index, trigger in enumerate(doc.triggers):
            if AudienceTag.SCHEDULE in trigger.audiences and trigger.schedule is not None:
                self.states.append(
                    ScheduleState(
                        tsg_id=doc.id,
                        trigger_index=index,
                        frequency=trigger.schedule.frequency,
                        next_due=start + trigger.schedule.frequency,
                    )
                )

    def tick(self, now: Optional[datetime] = None) -> TickReport:
        now = now or self.clock.now()
        report = TickReport(at=now)
        for state in self.states:
            if not state.due(now):
                continue
            doc = self.docs.get(state.tsg_id)
            if doc is None or not doc.enabled:
                state.last_tick = now
                state.next_due = now + state.frequency
                continue
            window = compute_window(state, now)
            state.last_tick = now
            state.next_due = now + state.frequency
            entry = TsgTickReport(
                tsg_id=state.tsg_id,
                trigger_index=state.trigger_index,
                window=window.to_json_obj(),
            )
            try:
                self._run_trigger(doc, state.trigger_index, window, now, entry)
            except Exception as exc:  # one guide must not break the tick
                entry.errors.append(f"{type(exc).__name__}: {exc}")
            report.entries.append(entry)
        report.mitigated = self.incidents.expire_incidents(now)
        return report

    def _run_trigger(
        self,
        doc: AutoTsgDoc,
        index: int,
        window: ExecutionContext,
        now: datetime,
        entry: TsgTickReport,
    ) -> None:
        trigger = doc.triggers[index]
        probe = ExecutionSession(
            doc=doc,
            audience=AudienceTag.SCHEDULE,
            base=window,
            clock=self.clock,
            sources=self.sources,
            config=self.config,
        )
        contexts = probe.run_trigger(index)
        entry.fired = any(
            o.kind == "trigger" and o.status == Status.FIRED for o in probe.outcomes
        )
        if not contexts:
            return

        scoping: List[str] = []
        for query in trigger.queries:
            for key in query.scoping_context:
                if key not in scoping:
                    scoping.append(key)
        ensembles = split_by_scoping_keys(contexts, scoping)
        entry.ensembles = len(ensembles)

        for _, ensemble in ensembles:
            session = ExecutionSession(
                doc=doc,
                audience=AudienceTag.SCHEDULE,
                base=window,
                clock=self.clock,
                sources=self.sources,
                config=self.config,
                scoping_keys=tuple(scoping),
            )
            seeds = [(nxt, ctx) for ctx in ensemble for nxt in trigger.next_steps]
            session.run_from(seeds)
            details = "\n\n".join(
                o.explanation_md
                for o in session.outcomes
                if o.explanation_md and o.status == Status.FIRED
            )
            for request in session.actions:
                self._dispatch(request, doc, now, details, entry)

    def _dispatch(
        self,
        request: ActionRequest,
        doc: AutoTsgDoc,
        now: datetime,
        details: str,
        entry: TsgTickReport,
    ) -> None:
        if request.kind is ActionKind.CREATE_INCIDENT:
            result = self.incidents.create_incident(
                request, now, tsg_type=doc.metadata.tsg_type.value, details=details
            )
            if result.decision == "created" and result.incident:
                entry.incidents_created.append(result.incident.incident_id)
            elif result.decision == "dedup_skipped" and result.incident:
                entry.incidents_deduped.append(result.incident.incident_id)
            else:
                entry.incidents_backed_off += 1
            return
        if request.kind in TICKET_ACTION_KINDS:
            entry.actions_rejected += 1
            entry.errors.append(
                f"{request.step}: {request.kind.value} rejected (no-ticket-context)"
            )
            return
        result = self.queue.enqueue(request)
        if result.decision == "accepted":
            entry.actions_accepted += 1
        elif result.decision == "coalesced":
            entry.actions_coalesced += 1
        else:
            entry.actions_rejected += 1
        self.queue.run_pending(now)
