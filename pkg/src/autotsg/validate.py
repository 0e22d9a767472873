"""Static semantic validation of parsed documents.

Validation is pure and always returns a report; a document with errors
must not be executed. Graph errors (cycles, dangling references), schedule
consistency, the TTL-versus-frequency rule for scheduled incident
creation, and base-context reachability warnings all live here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, List, Mapping, Optional, Sequence, Set

from . import expr as expr_mod
from .model import (
    ActionDef,
    ActionKind,
    AudienceTag,
    AutoTsgDoc,
)

TTL_FREQUENCY_FACTOR = 3

SCHEDULED_BASE_KEYS = frozenset({"StartTime", "TimeStamp"})


@dataclass(frozen=True)
class ValidationIssue:
    code: str
    scope: str
    message: str

    def to_dict(self) -> dict:
        return {"code": self.code, "scope": self.scope, "message": self.message}


@dataclass
class ValidationReport:
    errors: List[ValidationIssue] = field(default_factory=list)
    warnings: List[ValidationIssue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def error(self, code: str, scope: str, message: str) -> None:
        self.errors.append(ValidationIssue(code, scope, message))

    def warn(self, code: str, scope: str, message: str) -> None:
        self.warnings.append(ValidationIssue(code, scope, message))

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "errors": [i.to_dict() for i in self.errors],
            "warnings": [i.to_dict() for i in self.warnings],
        }


def _find_cycle(adjacency: Mapping[str, Sequence[str]]) -> Optional[List[str]]:
    """DFS cycle detection returning the cycle path, e.g. [A, B, A]."""
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {node: WHITE for node in adjacency}
    stack: List[str] = []

    def visit(node: str) -> Optional[List[str]]:
        color[node] = GRAY
        stack.append(node)
        for nxt in adjacency.get(node, ()):
            if nxt not in color:
                continue
            if color[nxt] == GRAY:
                start = stack.index(nxt)
                return stack[start:] + [nxt]
            if color[nxt] == WHITE:
                found = visit(nxt)
                if found:
                    return found
        stack.pop()
        color[node] = BLACK
        return None

    for node in adjacency:
        if color[node] == WHITE:
            found = visit(node)
            if found:
                return found
    return None


def kahn_topological_order(adjacency: Mapping[str, Sequence[str]]) -> Optional[List[str]]:
    """Kahn's algorithm; None when the graph has a cycle."""
    indegree = {node: 0 for node in adjacency}
    for node, nexts in adjacency.items():
        for nxt in nexts:
            if nxt in indegree:
                indegree[nxt] += 1
    ready = [n for n, d in indegree.items() if d == 0]
    order: List[str] = []
    while ready:
        node = ready.pop(0)
        order.append(node)
        for nxt in adjacency.get(node, ()):
            if nxt in indegree:
                indegree[nxt] -= 1
                if indegree[nxt] == 0:
                    ready.append(nxt)
    if len(order) != len(adjacency):
        return None
    return order


def _reachable(doc: AutoTsgDoc) -> Set[str]:
    steps = doc.step_map()
    seen: Set[str] = set()
    frontier: List[str] = []
    for trigger in doc.triggers:
        frontier.extend(trigger.next_steps)
    while frontier:
        name = frontier.pop()
        if name in seen or name not in steps:
            continue
        seen.add(name)
        frontier.extend(steps[name].next_steps)
    return seen


def _validate_filters(doc: AutoTsgDoc, report: ValidationReport) -> None:
    for step in (*doc.checks, *doc.explanations, *doc.actions):
        if step.filter:
            try:
                expr_mod.parse_filter(step.filter)
            except expr_mod.ExprSyntaxError as exc:
                report.error("bad-filter", step.name, f"filter does not parse: {exc}")


def _reachable_from(doc: AutoTsgDoc, roots: Iterable[str]) -> Set[str]:
    steps = doc.step_map()
    seen: Set[str] = set()
    frontier = list(roots)
    while frontier:
        name = frontier.pop()
        if name in seen or name not in steps:
            continue
        seen.add(name)
        frontier.extend(steps[name].next_steps)
    return seen


def validate_document(
    doc: AutoTsgDoc,
    base_context_keys: Optional[Mapping[AudienceTag, Set[str]]] = None,
) -> ValidationReport:
    report = ValidationReport()
    steps = doc.step_map()

    # Dangling references
    def check_refs(scope: str, next_steps: Sequence[str]) -> None:
        for ref in next_steps:
            if ref not in steps:
                report.error("unresolved-step", scope, f"NextSteps references unknown step {ref!r}")

    for i, trigger in enumerate(doc.triggers):
        check_refs(f"trigger[{i}]", trigger.next_steps)
    for step in steps.values():
        check_refs(step.name, step.next_steps)

    # Cycles among named steps
    adjacency = {name: [n for n in step.next_steps if n in steps] for name, step in steps.items()}
    cycle = _find_cycle(adjacency)
    if cycle:
        report.error("cycle", cycle[0], "cycle: " + " → ".join(cycle))

    # Schedule consistency
    for i, trigger in enumerate(doc.triggers):
        scope = f"trigger[{i}]"
        scheduled = AudienceTag.SCHEDULE in trigger.audiences
        if scheduled and len(trigger.audiences) > 1:
            report.error(
                "schedule-mixed-audiences",
                scope,
                "a scheduled trigger cannot list other audiences",
            )
        if scheduled and trigger.schedule is None:
            report.error("schedule-missing", scope, "Schedule audience requires ScheduleSettings")
        if not scheduled and trigger.schedule is not None:
            report.error(
                "schedule-unexpected",
                scope,
                "ScheduleSettings is only valid on Schedule-audience triggers",
            )
        if not scheduled:
            for qi, query in enumerate(trigger.queries):
                if query.scoping_context:
                    report.warn(
                        "scoping-ignored",
                        f"{scope}.queries[{qi}]",
                        "ScopingContext has no effect outside scheduled triggers",
                    )

        if scheduled:
            # Query k may only reference the scheduled window plus keys added
            # by earlier queries of the same trigger.
            available = set(SCHEDULED_BASE_KEYS)
            for qi, query in enumerate(trigger.queries):
                outside = sorted(query.required_keys() - available)
                if outside:
                    report.error(
                        "scheduled-unknown-placeholder",
                        f"{scope}.queries[{qi}]",
                        "scheduled trigger query references keys outside the scheduled "
                        f"base context: {', '.join(outside)}",
                    )
                available |= set(query.added_context)

            if trigger.schedule is not None:
                frequency = trigger.schedule.frequency
                for name in _reachable_from(doc, trigger.next_steps):
                    step = steps[name]
                    if isinstance(step, ActionDef) and step.action_kind is ActionKind.CREATE_INCIDENT:
                        if step.throttling is None:
                            report.error(
                                "ttl-missing",
                                name,
                                "CreateIncident downstream of a scheduled trigger requires "
                                "ThrottlingSettings.TimeToLive",
                            )
                        elif step.throttling.time_to_live < TTL_FREQUENCY_FACTOR * frequency:
                            report.error(
                                "ttl-too-short",
                                name,
                                f"TTL must be ≥ {TTL_FREQUENCY_FACTOR} × frequency "
                                f"({step.throttling.time_to_live} < "
                                f"{TTL_FREQUENCY_FACTOR} × {frequency})",
                            )

    _validate_filters(doc, report)

    # Reachability warnings
    reachable = _reachable(doc)
    for name in steps:
        if name not in reachable:
            report.warn("unreachable-step", name, "step is not reachable from any trigger")

    # Base-context coverage: a trigger whose first query needs keys the
    # audience's base context never provides will always be skipped there.
    if base_context_keys is not None:
        for i, trigger in enumerate(doc.triggers):
            first_required = trigger.queries[0].required_keys() if trigger.queries else set()
            for audience in trigger.audiences:
                if audience is AudienceTag.SCHEDULE:
                    provided: Set[str] = set(SCHEDULED_BASE_KEYS)
                else:
                    provided = set(base_context_keys.get(audience, set()))
                missing = sorted(first_required - provided)
                if missing:
                    report.warn(
                        "base-context-gap",
                        f"trigger[{i}]",
                        f"always skipped for {audience.value}: base context lacks "
                        f"{', '.join(missing)}",
                    )
    return report
