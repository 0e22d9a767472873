"""Typed model of troubleshooting-guide documents and their YAML parser.

A document has four step lists: Triggers (entry points that run telemetry
queries), Checks (query-and-branch), Explanations (rendered markdown), and
Actions (side effects). Parsing is strict: unknown sections, unknown
fields, and missing mandatory action parameters are errors, which catches
typos in hand-written guides early.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import timedelta
from enum import Enum
from typing import Dict, Mapping, Optional, Sequence, Set, Tuple, Union

import yaml

from .context import placeholder_keys
from .values import ConversionError, Dtype, parse_timespan


class TsgType(str, Enum):
    INFORMATIONAL = "Informational"
    WARNING = "Warning"
    CRITICAL = "Critical"


TSG_TYPE_PRECEDENCE = {
    TsgType.CRITICAL: 0,
    TsgType.WARNING: 1,
    TsgType.INFORMATIONAL: 2,
}


class AudienceTag(str, Enum):
    CUSTOMER_VISIBLE = "CustomerVisible"
    INTERNAL_ON_DEMAND = "InternalOnDemand"
    SUPPORT_TICKET = "SupportTicket"
    INTERNAL_TICKET = "InternalTicket"
    SCHEDULE = "Schedule"


class ActionKind(str, Enum):
    INCREASE_SEVERITY = "IncreaseSeverity"
    ROUTE_TICKET = "RouteTicket"
    CREATE_INCIDENT = "CreateIncident"
    CANCEL_MANAGEMENT_OPERATION = "CancelManagementOperation"
    CALL_AUTO_TSG = "CallAutoTsg"


MANDATORY_PARAMS: Dict[ActionKind, Tuple[str, ...]] = {
    ActionKind.INCREASE_SEVERITY: ("NewSeverity",),
    ActionKind.ROUTE_TICKET: ("TeamName",),
    ActionKind.CREATE_INCIDENT: ("Title", "OwningService", "OwningTeam"),
    ActionKind.CANCEL_MANAGEMENT_OPERATION: ("OperationId", "Reason"),
    ActionKind.CALL_AUTO_TSG: ("TargetTsg",),
}

TICKET_ACTION_KINDS = (ActionKind.INCREASE_SEVERITY, ActionKind.ROUTE_TICKET)


class ParseError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + loc)
        self.line = line
        self.column = column


@dataclass(frozen=True)
class ScheduleSettings:
    frequency: timedelta


@dataclass(frozen=True)
class ThrottlingSettings:
    time_to_live: timedelta


@dataclass(frozen=True)
class QuerySpec:
    source: str
    query_text: str
    explanation: Optional[str] = None
    added_context: Dict[str, Dtype] = field(default_factory=dict)
    scoping_context: Tuple[str, ...] = ()

    def required_keys(self) -> Set[str]:
        keys = placeholder_keys(self.query_text)
        if self.explanation:
            keys |= placeholder_keys(self.explanation)
        return keys


@dataclass(frozen=True)
class TriggerDef:
    audiences: Tuple[AudienceTag, ...]
    queries: Tuple[QuerySpec, ...]
    next_steps: Tuple[str, ...] = ()
    schedule: Optional[ScheduleSettings] = None


@dataclass(frozen=True)
class CheckDef:
    name: str
    query: QuerySpec
    audiences: Tuple[AudienceTag, ...] = ()
    filter: Optional[str] = None
    next_steps: Tuple[str, ...] = ()


@dataclass(frozen=True)
class ExplanationDef:
    name: str
    explanation: str
    audiences: Tuple[AudienceTag, ...] = ()
    filter: Optional[str] = None
    next_steps: Tuple[str, ...] = ()


@dataclass(frozen=True)
class ActionDef:
    name: str
    action_kind: ActionKind
    parameters: Dict[str, str]
    audiences: Tuple[AudienceTag, ...] = ()
    filter: Optional[str] = None
    throttling: Optional[ThrottlingSettings] = None
    next_steps: Tuple[str, ...] = ()


@dataclass(frozen=True)
class Metadata:
    title: str
    description: str = ""
    owner: str = ""
    tsg_type: TsgType = TsgType.INFORMATIONAL
    topics: Tuple[str, ...] = ()
    explicit_id: Optional[str] = None


Step = Union[TriggerDef, CheckDef, ExplanationDef, ActionDef]
NamedStep = Union[CheckDef, ExplanationDef, ActionDef]


@dataclass(frozen=True)
class AutoTsgDoc:
    id: str
    metadata: Metadata
    triggers: Tuple[TriggerDef, ...]
    checks: Tuple[CheckDef, ...] = ()
    explanations: Tuple[ExplanationDef, ...] = ()
    actions: Tuple[ActionDef, ...] = ()
    version: int = 1
    enabled: bool = True

    def step_map(self) -> Dict[str, NamedStep]:
        steps: Dict[str, NamedStep] = {}
        for step in (*self.checks, *self.explanations, *self.actions):
            steps[step.name] = step
        return steps

    def with_version(self, version: int, enabled: bool = True) -> "AutoTsgDoc":
        return AutoTsgDoc(
            id=self.id,
            metadata=self.metadata,
            triggers=self.triggers,
            checks=self.checks,
            explanations=self.explanations,
            actions=self.actions,
            version=version,
            enabled=enabled,
        )


def step_kind(step: Step) -> str:
    if isinstance(step, TriggerDef):
        return "trigger"
    if isinstance(step, CheckDef):
        return "check"
    if isinstance(step, ExplanationDef):
        return "explanation"
    return "action"


def infer_required_keys(step: Step) -> Set[str]:
    """Keys a step needs before it can run: every placeholder it mentions."""
    keys: Set[str] = set()
    if isinstance(step, TriggerDef):
        for query in step.queries:
            keys |= query.required_keys()
        return keys
    if step.filter:
        keys |= placeholder_keys(step.filter)
    if isinstance(step, CheckDef):
        keys |= step.query.required_keys()
    elif isinstance(step, ExplanationDef):
        keys |= placeholder_keys(step.explanation)
    elif isinstance(step, ActionDef):
        for value in step.parameters.values():
            keys |= placeholder_keys(value)
    return keys


# ---------------------------------------------------------------------------
# Parsing

_SLUG_RE = re.compile(r"[^a-z0-9]+")


def _slug(text: str) -> str:
    return _SLUG_RE.sub("-", text.lower()).strip("-") or "tsg"


def _fail(message: str, node=None) -> "ParseError":
    return ParseError(message)


def _require_mapping(value, where: str) -> Mapping:
    if not isinstance(value, Mapping):
        raise ParseError(f"{where} must be a mapping, got {type(value).__name__}")
    return value


def _require_list(value, where: str) -> list:
    if not isinstance(value, list):
        raise ParseError(f"{where} must be a list, got {type(value).__name__}")
    return value


def _check_keys(mapping: Mapping, allowed: Sequence[str], where: str) -> None:
    unknown = [k for k in mapping if k not in allowed]
    if unknown:
        raise ParseError(f"{where}: unknown field(s) {', '.join(sorted(map(str, unknown)))}")


def _template(value, where: str) -> str:
    """Coerce a YAML scalar into a template string.

    An unquoted ``{Key}`` in YAML arrives as a one-key mapping with a null
    value; that spelling is recovered as the placeholder it was meant to be.
    """
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return str(value)
    if isinstance(value, Mapping) and len(value) == 1:
        key, inner = next(iter(value.items()))
        if inner is None and isinstance(key, str) and re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", key):
            return "{" + key + "}"
    raise ParseError(f"{where}: expected a string (quote values containing '{{...}}')")


def _timespan_field(value, where: str) -> timedelta:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        span = timedelta(seconds=value)
    elif isinstance(value, str):
        try:
            span = parse_timespan(value)
        except ConversionError as exc:
            raise ParseError(f"{where}: {exc}") from None
    else:
        raise ParseError(f"{where}: expected a timespan string")
    if span <= timedelta(0):
        raise ParseError(f"{where}: timespan must be positive")
    return span


def _audiences(value, where: str) -> Tuple[AudienceTag, ...]:
    tags = []
    for item in _require_list(value, where):
        try:
            tags.append(AudienceTag(str(item)))
        except ValueError:
            raise ParseError(
                f"{where}: unknown audience {item!r}; expected one of "
                f"{', '.join(a.value for a in AudienceTag)}"
            ) from None
    return tuple(tags)


def _next_steps(mapping: Mapping, where: str) -> Tuple[str, ...]:
    raw = mapping.get("NextSteps")
    if raw is None:
        return ()
    steps = []
    for item in _require_list(raw, f"{where}.NextSteps"):
        if not isinstance(item, str) or not item:
            raise ParseError(f"{where}.NextSteps entries must be non-empty strings")
        steps.append(item)
    return tuple(steps)


def _query_spec(value, where: str, *, allow_scoping: bool) -> QuerySpec:
    mapping = _require_mapping(value, where)
    _check_keys(
        mapping,
        ["Source", "Explanation", "QueryText", "AddedContext", "ScopingContext"],
        where,
    )
    source = mapping.get("Source")
    if not isinstance(source, str) or not source:
        raise ParseError(f"{where}: Source is required")
    query_text = mapping.get("QueryText")
    if not isinstance(query_text, str) or not query_text.strip():
        raise ParseError(f"{where}: QueryText is required")
    explanation = mapping.get("Explanation")
    if explanation is not None:
        explanation = _template(explanation, f"{where}.Explanation")

    added: Dict[str, Dtype] = {}
    if "AddedContext" in mapping and mapping["AddedContext"] is not None:
        for key, type_name in _require_mapping(
            mapping["AddedContext"], f"{where}.AddedContext"
        ).items():
            try:
                added[str(key)] = Dtype.from_name(str(type_name))
            except ConversionError as exc:
                raise ParseError(f"{where}.AddedContext.{key}: {exc}") from None

    scoping: Tuple[str, ...] = ()
    if "ScopingContext" in mapping and mapping["ScopingContext"] is not None:
        if not allow_scoping:
            raise ParseError(f"{where}: ScopingContext is only valid on trigger queries")
        scoping = tuple(
            str(k) for k in _require_list(mapping["ScopingContext"], f"{where}.ScopingContext")
        )
        for key in scoping:
            if key not in added:
                raise ParseError(
                    f"{where}: ScopingContext key {key!r} must also appear in AddedContext"
                )
    return QuerySpec(
        source=source,
        query_text=query_text,
        explanation=explanation,
        added_context=added,
        scoping_context=scoping,
    )


def _trigger(value, index: int) -> TriggerDef:
    where = f"Triggers[{index}]"
    mapping = _require_mapping(value, where)
    _check_keys(mapping, ["Audiences", "ScheduleSettings", "Queries", "NextSteps"], where)
    if "Audiences" not in mapping:
        raise ParseError(f"{where}: Audiences is required")
    audiences = _audiences(mapping["Audiences"], f"{where}.Audiences")
    if not audiences:
        raise ParseError(f"{where}: Audiences must be non-empty")

    schedule = None
    if "ScheduleSettings" in mapping and mapping["ScheduleSettings"] is not None:
        settings = _require_mapping(mapping["ScheduleSettings"], f"{where}.ScheduleSettings")
        _check_keys(settings, ["Frequency"], f"{where}.ScheduleSettings")
        if "Frequency" not in settings:
            raise ParseError(f"{where}.ScheduleSettings: Frequency is required")
        schedule = ScheduleSettings(
            frequency=_timespan_field(settings["Frequency"], f"{where}.ScheduleSettings.Frequency")
        )

    queries_raw = mapping.get("Queries")
    if not queries_raw:
        raise ParseError(f"{where}: trigger requires at least one query")
    queries = tuple(
        _query_spec(q, f"{where}.Queries[{i}]", allow_scoping=True)
        for i, q in enumerate(_require_list(queries_raw, f"{where}.Queries"))
    )
    return TriggerDef(
        audiences=audiences,
        queries=queries,
        next_steps=_next_steps(mapping, where),
        schedule=schedule,
    )


def _named_common(mapping: Mapping, where: str) -> Tuple[str, Tuple[AudienceTag, ...], Optional[str]]:
    name = mapping.get("Name")
    if not isinstance(name, str) or not name:
        raise ParseError(f"{where}: Name is required")
    audiences: Tuple[AudienceTag, ...] = ()
    if "Audiences" in mapping and mapping["Audiences"] is not None:
        audiences = _audiences(mapping["Audiences"], f"{where}.Audiences")
    filt = mapping.get("Filter")
    if filt is not None:
        filt = _template(filt, f"{where}.Filter")
    return name, audiences, filt


def _check(value, index: int) -> CheckDef:
    where = f"Checks[{index}]"
    mapping = _require_mapping(value, where)
    _check_keys(mapping, ["Name", "Audiences", "Filter", "Query", "NextSteps"], where)
    name, audiences, filt = _named_common(mapping, where)
    if "Query" not in mapping:
        raise ParseError(f"{where}: Query is required")
    query = _query_spec(mapping["Query"], f"{where}.Query", allow_scoping=False)
    return CheckDef(
        name=name,
        query=query,
        audiences=audiences,
        filter=filt,
        next_steps=_next_steps(mapping, where),
    )


def _explanation(value, index: int) -> ExplanationDef:
    where = f"Explanations[{index}]"
    mapping = _require_mapping(value, where)
    _check_keys(mapping, ["Name", "Audiences", "Filter", "Explanation", "NextSteps"], where)
    name, audiences, filt = _named_common(mapping, where)
    text = mapping.get("Explanation")
    if text is None:
        raise ParseError(f"{where}: Explanation is required")
    text = _template(text, f"{where}.Explanation")
    if not text.strip():
        raise ParseError(f"{where}: Explanation must be non-empty")
    return ExplanationDef(
        name=name,
        explanation=text,
        audiences=audiences,
        filter=filt,
        next_steps=_next_steps(mapping, where),
    )


def _action(value, index: int) -> ActionDef:
    where = f"Actions[{index}]"
    mapping = _require_mapping(value, where)
    kind_raw = mapping.get("Action")
    if kind_raw is None:
        raise ParseError(f"{where}: Action kind is required")
    try:
        kind = ActionKind(str(kind_raw))
    except ValueError:
        raise ParseError(
            f"{where}: unknown action kind {kind_raw!r}; expected one of "
            f"{', '.join(k.value for k in ActionKind)}"
        ) from None

    param_names = MANDATORY_PARAMS[kind]
    allowed = ["Name", "Audiences", "Filter", "Action", "ThrottlingSettings", "NextSteps"]
    allowed.extend(param_names)
    _check_keys(mapping, allowed, where)
    name, audiences, filt = _named_common(mapping, where)

    parameters: Dict[str, str] = {}
    for pname in param_names:
        if pname not in mapping or mapping[pname] is None:
            raise ParseError(f"{where}: {kind.value} requires parameter {pname}")
        parameters[pname] = _template(mapping[pname], f"{where}.{pname}")

    throttling = None
    if "ThrottlingSettings" in mapping and mapping["ThrottlingSettings"] is not None:
        settings = _require_mapping(mapping["ThrottlingSettings"], f"{where}.ThrottlingSettings")
        _check_keys(settings, ["TimeToLive"], f"{where}.ThrottlingSettings")
        if "TimeToLive" not in settings:
            raise ParseError(f"{where}.ThrottlingSettings: TimeToLive is required")
        throttling = ThrottlingSettings(
            time_to_live=_timespan_field(
                settings["TimeToLive"], f"{where}.ThrottlingSettings.TimeToLive"
            )
        )
    return ActionDef(
        name=name,
        action_kind=kind,
        parameters=parameters,
        audiences=audiences,
        filter=filt,
        throttling=throttling,
        next_steps=_next_steps(mapping, where),
    )


def parse_document(text: str, doc_id: Optional[str] = None) -> AutoTsgDoc:
    """Parse DSL YAML into a typed document; strict about unknown fields."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        if mark is not None:
            raise ParseError(
                f"malformed YAML: {getattr(exc, 'problem', exc)}",
                line=mark.line + 1,
                column=mark.column + 1,
            ) from None
        raise ParseError(f"malformed YAML: {exc}") from None

    root = _require_mapping(data, "document")
    _check_keys(root, ["Metadata", "Triggers", "Checks", "Explanations", "Actions"], "document")

    if "Metadata" not in root:
        raise ParseError("document: Metadata section is required")
    meta_map = _require_mapping(root["Metadata"], "Metadata")
    _check_keys(meta_map, ["Id", "Title", "Description", "Owner", "Type", "Topics"], "Metadata")
    title = meta_map.get("Title")
    if not isinstance(title, str) or not title:
        raise ParseError("Metadata: Title is required")
    type_raw = meta_map.get("Type", TsgType.INFORMATIONAL.value)
    try:
        tsg_type = TsgType(str(type_raw))
    except ValueError:
        raise ParseError(
            f"Metadata: unknown Type {type_raw!r}; expected one of "
            f"{', '.join(t.value for t in TsgType)}"
        ) from None
    topics: Tuple[str, ...] = ()
    if "Topics" in meta_map and meta_map["Topics"] is not None:
        topics = tuple(str(t) for t in _require_list(meta_map["Topics"], "Metadata.Topics"))
    explicit_id = meta_map.get("Id")
    if explicit_id is not None and (not isinstance(explicit_id, str) or not explicit_id):
        raise ParseError("Metadata: Id must be a non-empty string")

    metadata = Metadata(
        title=title,
        description=str(meta_map.get("Description") or ""),
        owner=str(meta_map.get("Owner") or ""),
        tsg_type=tsg_type,
        topics=topics,
        explicit_id=explicit_id,
    )

    triggers_raw = root.get("Triggers")
    if not triggers_raw:
        raise ParseError("document: at least one trigger is required")
    triggers = tuple(
        _trigger(t, i) for i, t in enumerate(_require_list(triggers_raw, "Triggers"))
    )

    checks = tuple(
        _check(c, i) for i, c in enumerate(_require_list(root.get("Checks") or [], "Checks"))
    )
    explanations = tuple(
        _explanation(e, i)
        for i, e in enumerate(_require_list(root.get("Explanations") or [], "Explanations"))
    )
    actions = tuple(
        _action(a, i) for i, a in enumerate(_require_list(root.get("Actions") or [], "Actions"))
    )

    seen: Dict[str, str] = {}
    for group, steps in (("Checks", checks), ("Explanations", explanations), ("Actions", actions)):
        for step in steps:
            if step.name in seen:
                raise ParseError(
                    f"duplicate step name {step.name!r} (in {seen[step.name]} and {group})"
                )
            seen[step.name] = group

    return AutoTsgDoc(
        id=explicit_id or doc_id or _slug(title),
        metadata=metadata,
        triggers=triggers,
        checks=checks,
        explanations=explanations,
        actions=actions,
    )


# ---------------------------------------------------------------------------
# Serialization (round-trip support)

def document_to_yaml_dict(doc: AutoTsgDoc) -> dict:
    meta: dict = {"Title": doc.metadata.title}
    if doc.metadata.explicit_id:
        meta["Id"] = doc.metadata.explicit_id
    if doc.metadata.description:
        meta["Description"] = doc.metadata.description
    if doc.metadata.owner:
        meta["Owner"] = doc.metadata.owner
    meta["Type"] = doc.metadata.tsg_type.value
    if doc.metadata.topics:
        meta["Topics"] = list(doc.metadata.topics)

    def dump_query(q: QuerySpec) -> dict:
        out: dict = {"Source": q.source}
        if q.explanation is not None:
            out["Explanation"] = q.explanation
        out["QueryText"] = q.query_text
        if q.added_context:
            out["AddedContext"] = {k: v.value for k, v in q.added_context.items()}
        if q.scoping_context:
            out["ScopingContext"] = list(q.scoping_context)
        return out

    def dump_common(step) -> dict:
        out: dict = {"Name": step.name}
        if step.audiences:
            out["Audiences"] = [a.value for a in step.audiences]
        if step.filter is not None:
            out["Filter"] = step.filter
        return out

    root: dict = {"Metadata": meta, "Triggers": []}
    for trig in doc.triggers:
        t: dict = {"Audiences": [a.value for a in trig.audiences]}
        if trig.schedule is not None:
            from .values import render_timespan

            t["ScheduleSettings"] = {"Frequency": render_timespan(trig.schedule.frequency)}
        t["Queries"] = [dump_query(q) for q in trig.queries]
        if trig.next_steps:
            t["NextSteps"] = list(trig.next_steps)
        root["Triggers"].append(t)
    if doc.checks:
        root["Checks"] = []
        for check in doc.checks:
            c = dump_common(check)
            c["Query"] = dump_query(check.query)
            if check.next_steps:
                c["NextSteps"] = list(check.next_steps)
            root["Checks"].append(c)
    if doc.explanations:
        root["Explanations"] = []
        for expl in doc.explanations:
            e = dump_common(expl)
            e["Explanation"] = expl.explanation
            if expl.next_steps:
                e["NextSteps"] = list(expl.next_steps)
            root["Explanations"].append(e)
    if doc.actions:
        root["Actions"] = []
        for action in doc.actions:
            a = dump_common(action)
            a["Action"] = action.action_kind.value
            for key, value in action.parameters.items():
                a[key] = value
            if action.throttling is not None:
                from .values import render_timespan

                a["ThrottlingSettings"] = {
                    "TimeToLive": render_timespan(action.throttling.time_to_live)
                }
            if action.next_steps:
                a["NextSteps"] = list(action.next_steps)
            root["Actions"].append(a)
    return root


def document_to_yaml(doc: AutoTsgDoc) -> str:
    return yaml.safe_dump(document_to_yaml_dict(doc), sort_keys=False, allow_unicode=True)
