"""HTTP surface: the two-call diagnostic flow plus registry and feedback.

Call one (POST /api/context:extract) turns an incident payload into a
typed base context using per-product extraction rules; call two
(POST /api/execute) runs the diagnosis with that context. Keeping the
calls separate lets the caller adjust the context in between, including
injecting whole draft guides for interactive development.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import timedelta
from pathlib import Path
from typing import Dict, List, Mapping, Optional

from fastapi import FastAPI, HTTPException, Request, Response

from .actions import IncidentManager, IncidentStore, OperationQueue, TicketRecord
from .clock import Clock, RealClock
from .config import DEFAULT_CONFIG, RuntimeConfig
from .context import ExecutionContext
from .model import AudienceTag, ParseError, parse_document
from .pipeline import DiagnosticRequest, run_diagnostics
from .query import SourceRegistry, TableStore
from .ranking import ProductProfile, RankerClient, StubRankerClient
from .registry import FeedbackRecord, TsgRegistry, UnknownTsgError
from .render import response_to_json
from .validate import validate_document
from .values import ContextValue, ConversionError, parse_datetime, parse_value


@dataclass(frozen=True)
class FieldMapping:
    key: str
    dtype: str = "string"
    source_field: Optional[str] = None
    regex: Optional[str] = None  # exactly one capture group, applied to incident text


@dataclass(frozen=True)
class EnrichmentQuery:
    source: str
    query_text: str
    added_context: Dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class BaseContextRule:
    product: str
    audience: AudienceTag
    mappings: List[FieldMapping] = field(default_factory=list)
    enrichment: List[EnrichmentQuery] = field(default_factory=list)


def load_rules(data: Mapping) -> List[BaseContextRule]:
    rules = []
    for raw in data.get("rules", []):
        mappings = [
            FieldMapping(
                key=m["key"],
                dtype=m.get("type", "string"),
                source_field=m.get("field"),
                regex=m.get("regex"),
            )
            for m in raw.get("mappings", [])
        ]
        keys = [m.key for m in mappings]
        if len(set(keys)) != len(keys):
            raise ValueError("base-context rule maps the same key twice")
        enrichment = [
            EnrichmentQuery(
                source=e.get("source", "Kusto"),
                query_text=e["query_text"],
                added_context=dict(e.get("added_context", {})),
            )
            for e in raw.get("enrichment", [])
        ]
        for audience in raw.get("audiences", [a.value for a in AudienceTag]):
            rules.append(
                BaseContextRule(
                    product=data.get("product", "default"),
                    audience=AudienceTag(audience),
                    mappings=mappings,
                    enrichment=enrichment,
                )
            )
    return rules


class ExtractionError(ValueError):
    pass


def extract_base_context(
    incident: Mapping,
    rule: BaseContextRule,
    sources: SourceRegistry,
    clock: Clock,
    config: RuntimeConfig = DEFAULT_CONFIG,
) -> ExecutionContext:
    """Field mappings first, enrichment queries for what is still missing.

    StartTime/EndTime always come from the incident impact window, falling
    back to the lookback window ending now. Missing keys stay absent; the
    per-guide skip rule downstream handles them.
    """
    text = "\n".join(
        str(incident.get(field, "")) for field in ("title", "description") if incident.get(field)
    )
    entries: Dict[str, ContextValue] = {}
    for mapping in rule.mappings:
        raw: Optional[str] = None
        if mapping.source_field is not None:
            value = incident.get(mapping.source_field)
            raw = str(value) if value is not None else None
        elif mapping.regex is not None:
            m = re.search(mapping.regex, text)
            if m:
                raw = m.group(1)
        if raw is None or mapping.key in entries:
            continue
        try:
            entries[mapping.key] = parse_value(raw, mapping.dtype)
        except ConversionError:
            continue  # an unparseable hit is treated as a miss

    ctx = ExecutionContext(entries)
    for query in rule.enrichment:
        missing_targets = [k for k in query.added_context if k not in ctx]
        if not missing_targets:
            continue
        from .context import substitute

        try:
            table = sources.get(query.source).execute(substitute(query.query_text, ctx))
        except Exception:  # enrichment is best-effort; a miss just leaves keys absent
            continue
        if not table.rows:
            continue
        row_env = table.row_env(table.rows[0])
        additions = {}
        for key in missing_targets:
            if key in row_env:
                additions[key] = row_env[key]
        ctx = ctx.extend(additions)

    now = clock.now()
    window: Dict[str, ContextValue] = {}
    if "StartTime" not in ctx:
        start_raw = incident.get("impact_start") or incident.get("created")
        if start_raw:
            window["StartTime"] = ContextValue.dt(
                parse_datetime(str(start_raw))
                - (timedelta(0) if incident.get("impact_start") else config.default_lookback)
            )
        else:
            window["StartTime"] = ContextValue.dt(now - config.default_lookback)
    if "EndTime" not in ctx:
        end_raw = incident.get("impact_end")
        window["EndTime"] = ContextValue.dt(parse_datetime(str(end_raw)) if end_raw else now)
    return ctx.extend(window)


@dataclass
class AppState:
    registry: TsgRegistry
    sources: SourceRegistry
    tables: TableStore
    incidents: IncidentManager
    incident_store: IncidentStore
    queue: OperationQueue
    profile: ProductProfile
    client: Optional[RankerClient]
    rules: List[BaseContextRule]
    clock: Clock
    config: RuntimeConfig = DEFAULT_CONFIG

    def rule_for(self, product: str, audience: AudienceTag) -> Optional[BaseContextRule]:
        for rule in self.rules:
            if rule.product == product and rule.audience == audience:
                return rule
        return None


def _schema_text() -> str:
    path = Path(__file__).parent / "schemas" / "diagnostic_response.schema.json"
    return path.read_text(encoding="utf-8")


def create_app(state: AppState) -> FastAPI:
    app = FastAPI(title="autotsg", version="0.1.0")
    app.state.autotsg = state

    @app.get("/api/schema")
    def get_schema() -> Response:
        return Response(content=_schema_text(), media_type="application/json")

    @app.get("/api/tsgs")
    def list_tsgs() -> list:
        out = []
        for doc in state.registry.all_docs():
            approval = state.registry.approval(doc.id)
            out.append(
                {
                    "id": doc.id,
                    "version": doc.version,
                    "enabled": doc.enabled,
                    "title": doc.metadata.title,
                    "type": doc.metadata.tsg_type.value,
                    "topics": list(doc.metadata.topics),
                    "approval": approval.to_dict(),
                }
            )
        return out

    @app.get("/api/tsgs/{tsg_id}")
    def get_tsg(tsg_id: str) -> dict:
        try:
            doc = state.registry.get(tsg_id)
        except UnknownTsgError:
            raise HTTPException(status_code=404, detail=f"unknown guide {tsg_id!r}")
        from .model import document_to_yaml

        return {
            "id": doc.id,
            "version": doc.version,
            "enabled": doc.enabled,
            "yaml": document_to_yaml(doc),
            "validation": validate_document(doc).to_dict(),
        }

    @app.put("/api/tsgs/{tsg_id}")
    async def put_tsg(tsg_id: str, request: Request) -> dict:
        text = (await request.body()).decode("utf-8")
        try:
            doc, report = state.registry.upload(tsg_id, text)
        except ParseError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        if not report.ok:
            raise HTTPException(status_code=422, detail=report.to_dict())
        return {
            "id": doc.id,
            "version": doc.version,
            "enabled": doc.enabled,
            "validation": report.to_dict(),
        }

    @app.get("/api/incidents")
    def list_incidents() -> list:
        return [r.to_dict() for r in state.incident_store.all_records()]

    @app.post("/api/context:extract")
    def context_extract(payload: dict) -> dict:
        audience_raw = payload.get("audience", AudienceTag.INTERNAL_TICKET.value)
        try:
            audience = AudienceTag(audience_raw)
        except ValueError:
            raise HTTPException(status_code=422, detail=f"unknown audience {audience_raw!r}")
        product = payload.get("product", "default")
        rule = state.rule_for(product, audience)
        if rule is None:
            raise HTTPException(
                status_code=404,
                detail=f"no base-context rule configured for product {product!r} / {audience.value}",
            )
        incident = payload.get("incident", {})
        ctx = extract_base_context(incident, rule, state.sources, state.clock, state.config)
        problem = " ".join(
            str(incident.get(k)) for k in ("title", "description") if incident.get(k)
        )
        return {"base_context": ctx.to_json_obj(), "problem_statement": problem}

    @app.post("/api/feedback")
    def feedback(payload: dict) -> dict:
        try:
            record = FeedbackRecord(
                tsg_id=payload["tsg_id"],
                version=int(payload.get("version") or state.registry.get(payload["tsg_id"]).version),
                verdict=payload["verdict"],
                text=payload.get("text"),
                timestamp=state.clock.now(),
            )
            summary = state.registry.submit_feedback(record)
        except UnknownTsgError as exc:
            raise HTTPException(status_code=404, detail=f"unknown guide {exc}")
        except (KeyError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return summary.to_dict()

    @app.post("/api/execute")
    def execute(payload: dict) -> Response:
        try:
            audience = AudienceTag(payload.get("audience", AudienceTag.INTERNAL_TICKET.value))
        except ValueError:
            raise HTTPException(status_code=422, detail="unknown audience")
        try:
            base = ExecutionContext.from_json_obj(payload.get("base_context", {}))
        except (ConversionError, KeyError, TypeError) as exc:
            raise HTTPException(status_code=422, detail=f"bad base_context: {exc}")

        injected = []
        reports = []
        for i, text in enumerate(payload.get("injected_tsgs", [])):
            try:
                doc = parse_document(text, doc_id=f"injected-{i}")
            except ParseError as exc:
                raise HTTPException(status_code=422, detail={"injected": i, "error": str(exc)})
            report = validate_document(doc)
            reports.append({"id": doc.id, "validation": report.to_dict()})
            if not report.ok:
                raise HTTPException(
                    status_code=422, detail={"injected": i, "validation": report.to_dict()}
                )
            injected.append(doc)

        if payload.get("validate_only"):
            from .render import response_to_json as _json

            graphs = []
            for doc in injected:
                graphs.append({"id": doc.id, "graph": document_graph(doc)})
            body = {"reports": reports, "graphs": graphs}
            return Response(content=_json(body), media_type="application/json")

        ticket = None
        if payload.get("ticket"):
            t = payload["ticket"]
            ticket = TicketRecord(
                ticket_id=str(t.get("id", "T-0")),
                severity=str(t.get("severity", state.config.severity_scale[-1])),
                owning_team=str(t.get("owning_team", "")),
            )

        if payload.get("now"):
            from .clock import VirtualClock

            clock: Clock = VirtualClock(parse_datetime(str(payload["now"])))
        else:
            clock = state.clock

        request = DiagnosticRequest(
            base=base,
            audience=audience,
            problem_statement=str(payload.get("problem_statement", "")),
            ticket=ticket,
            injected_docs=injected,
        )
        response = run_diagnostics(
            request,
            docs=state.registry.enabled_docs(),
            sources=state.sources,
            clock=clock,
            client=state.client,
            profile=state.profile,
            incidents=state.incidents,
            queue=state.queue,
            registry=state.registry,
            config=state.config,
        )
        return Response(content=response_to_json(response), media_type="application/json")

    return app


def document_graph(doc) -> dict:
    """Node/edge view of a parsed document for visualization clients."""
    from .model import infer_required_keys, step_kind

    nodes = []
    edges = []
    for i, trigger in enumerate(doc.triggers):
        name = f"trigger[{i}]"
        nodes.append(
            {
                "name": name,
                "kind": "trigger",
                "audiences": [a.value for a in trigger.audiences],
                "required_keys": sorted(infer_required_keys(trigger)),
            }
        )
        for nxt in trigger.next_steps:
            edges.append({"from": name, "to": nxt})
    for step in (*doc.checks, *doc.explanations, *doc.actions):
        nodes.append(
            {
                "name": step.name,
                "kind": step_kind(step),
                "audiences": [a.value for a in step.audiences],
                "filter": step.filter,
                "required_keys": sorted(infer_required_keys(step)),
            }
        )
        for nxt in step.next_steps:
            edges.append({"from": step.name, "to": nxt})
    return {"nodes": nodes, "edges": edges}


def default_state(
    *,
    registry: Optional[TsgRegistry] = None,
    tables: Optional[TableStore] = None,
    sources: Optional[SourceRegistry] = None,
    profile: Optional[ProductProfile] = None,
    client: Optional[RankerClient] = None,
    rules: Optional[List[BaseContextRule]] = None,
    clock: Optional[Clock] = None,
    config: RuntimeConfig = DEFAULT_CONFIG,
    incident_journal: Optional[Path] = None,
) -> AppState:
    tables = tables or TableStore()
    sources = sources or SourceRegistry.local(tables)
    store = IncidentStore(incident_journal)
    return AppState(
        registry=registry or TsgRegistry(config),
        sources=sources,
        tables=tables,
        incidents=IncidentManager(store, config),
        incident_store=store,
        queue=OperationQueue(config, telemetry=tables),
        profile=profile or ProductProfile(description="(no product profile configured)"),
        client=client if client is not None else StubRankerClient(),
        rules=rules or [],
        clock=clock or RealClock(),
        config=config,
    )
