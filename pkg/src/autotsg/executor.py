"""Graph traversal over activated documents.

Each (step, context) pair passes through an ordered gate sequence:

  (a) audience  - steps that declare audiences run only for them; steps
      that declare nothing inherit applicability from their trigger;
  (b) required keys - a step missing any key it references is skipped;
  (c) memoization - a step already executed for an equivalent projected
      context is not re-run, but its next steps are still scheduled under
      the incoming context so the graph is fully traversed;
  (d) filter - a false predicate prunes the subtree for this context;
  (e) execution - checks query and expand variations, explanations render,
      actions emit requests (the runtime executes them later).

Traversal is breadth-first with declaration-order tie-breaking, so output
is deterministic. Queries never run twice for the same projected context
inside one session, and sessions are never shared across documents.
"""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Set, Tuple

from . import expr as expr_mod
from .actions import ActionRequest
from .clock import Clock
from .config import DEFAULT_CONFIG, RuntimeConfig
from .context import (
    ExecutionContext,
    MissingKeyError,
    extract_additions,
    memo_key,
    substitute,
)
from .model import (
    ActionDef,
    ActionKind,
    AudienceTag,
    AutoTsgDoc,
    CheckDef,
    ExplanationDef,
    NamedStep,
    infer_required_keys,
    step_kind,
)
from .query import QueryError, SourceRegistry, Table
from .values import ContextValue


class Status:
    FIRED = "Fired"
    NO_DATA = "NoData"
    FILTERED_OUT = "FilteredOut"
    SKIPPED_MISSING_KEYS = "SkippedMissingKeys"
    DEDUPLICATED = "Deduplicated"
    ERRORED = "Errored"


@dataclass
class StepOutcome:
    step: str
    kind: str  # trigger | check | explanation | action
    status: str
    explanation_md: Optional[str] = None
    table: Optional[Table] = None
    query_text: Optional[str] = None
    variations: int = 0
    error: Optional[str] = None
    dedup_of: Optional[str] = None

    def to_dict(self) -> dict:
        out: dict = {
            "step": self.step,
            "kind": self.kind,
            "status": self.status,
            "variations": self.variations,
        }
        if self.explanation_md is not None:
            out["explanation"] = self.explanation_md
        if self.table is not None:
            out["table"] = self.table.to_json_obj()
        if self.query_text is not None:
            out["query_text"] = self.query_text
        if self.error is not None:
            out["error"] = self.error
        if self.dedup_of is not None:
            out["deduplicated_with"] = self.dedup_of
        return out


@dataclass
class Finding:
    tsg_id: str
    version: int
    tsg_type: str
    topics: Tuple[str, ...]
    activated: bool
    outcomes: List[StepOutcome]
    actions: List[ActionRequest]
    headline: Optional[str] = None
    error: Optional[str] = None
    called_by: Optional[str] = None

    def explanation_texts(self) -> List[str]:
        return [o.explanation_md for o in self.outcomes if o.explanation_md]

    def to_dict(self) -> dict:
        out = {
            "tsg_id": self.tsg_id,
            "version": self.version,
            "tsg_type": self.tsg_type,
            "topics": list(self.topics),
            "activated": self.activated,
            "headline": self.headline,
            "outcomes": [o.to_dict() for o in self.outcomes],
            "actions": [a.to_dict() for a in self.actions],
        }
        if self.error is not None:
            out["error"] = self.error
        if self.called_by is not None:
            out["called_by"] = self.called_by
        return out


@dataclass
class _MemoEntry:
    key: str
    status: str
    additions: List[Dict[str, ContextValue]]
    ran_query: bool


@dataclass
class ExecutionSession:
    """Per-document execution state: memo table, outcomes, emitted actions."""

    doc: AutoTsgDoc
    audience: AudienceTag
    base: ExecutionContext
    clock: Clock
    sources: SourceRegistry
    config: RuntimeConfig = DEFAULT_CONFIG
    registry: Optional[object] = None  # TsgRegistry, for CallAutoTsg
    depth: int = 0
    scoping_keys: Tuple[str, ...] = ()

    memo: Dict[str, _MemoEntry] = field(default_factory=dict)
    outcomes: List[StepOutcome] = field(default_factory=list)
    actions: List[ActionRequest] = field(default_factory=list)
    nested_findings: List[Finding] = field(default_factory=list)
    query_calls: Counter = field(default_factory=Counter)
    _skip_seen: Set[str] = field(default_factory=set)
    _steps: Optional[Dict[str, NamedStep]] = None

    def steps(self) -> Dict[str, NamedStep]:
        if self._steps is None:
            self._steps = self.doc.step_map()
        return self._steps

    # ------------------------------------------------------------------
    def executed_query_keys(self, step: str) -> int:
        """Distinct memo keys of this step whose execution ran a query."""
        return sum(
            1
            for entry in self.memo.values()
            if entry.ran_query and entry.key.split("::", 2)[1] == step
        )

    def _record(self, outcome: StepOutcome) -> StepOutcome:
        self.outcomes.append(outcome)
        return outcome

    # ------------------------------------------------------------------
    def run_trigger(self, index: int) -> List[ExecutionContext]:
        """Evaluate one trigger; returns the produced context variations."""
        trigger = self.doc.triggers[index]
        if self.audience not in trigger.audiences:
            return []
        contexts: List[ExecutionContext] = [self.base]
        single = len(trigger.queries) == 1
        for qi, query in enumerate(trigger.queries):
            label = f"trigger[{index}]" if single else f"trigger[{index}].q{qi}"
            next_contexts: List[ExecutionContext] = []
            for ctx in contexts:
                produced = self._run_query_step(
                    label,
                    "trigger",
                    ctx,
                    required=query.required_keys(),
                    source=query.source,
                    query_text=query.query_text,
                    explanation=query.explanation,
                    added=query.added_context,
                )
                next_contexts.extend(produced)
            deduped: List[ExecutionContext] = []
            seen: Set[ExecutionContext] = set()
            for ctx in next_contexts:
                if ctx not in seen:
                    seen.add(ctx)
                    deduped.append(ctx)
            contexts = deduped
            if not contexts:
                break
        return contexts

    def _run_query_step(
        self,
        label: str,
        kind: str,
        ctx: ExecutionContext,
        *,
        required: Set[str],
        source: str,
        query_text: str,
        explanation: Optional[str],
        added: Mapping,
    ) -> List[ExecutionContext]:
        missing = ctx.missing(required)
        if missing:
            marker = f"{label}|missing:{','.join(sorted(missing))}"
            if marker not in self._skip_seen:
                self._skip_seen.add(marker)
                self._record(
                    StepOutcome(
                        label,
                        kind,
                        Status.SKIPPED_MISSING_KEYS,
                        error=f"missing context keys: {', '.join(sorted(missing))}",
                    )
                )
            return []

        key = memo_key(self.doc.id, label, required, ctx)
        if key in self.memo:
            entry = self.memo[key]
            self._record(StepOutcome(label, kind, Status.DEDUPLICATED, dedup_of=key))
            return self._extend_all(ctx, entry.additions)

        try:
            text = substitute(query_text, ctx)
            table = self.sources.get(source).execute(text)
        except (QueryError, expr_mod.EvalTypeError) as exc:
            self.memo[key] = _MemoEntry(key, Status.ERRORED, [], ran_query=False)
            self._record(StepOutcome(label, kind, Status.ERRORED, error=str(exc)))
            return []
        self.query_calls[label] += 1

        if not table.rows:
            self.memo[key] = _MemoEntry(key, Status.NO_DATA, [], ran_query=True)
            self._record(
                StepOutcome(label, kind, Status.NO_DATA, table=table, query_text=text)
            )
            return []

        try:
            additions = extract_additions(table, added) if added else [{}]
        except (KeyError, ValueError) as exc:
            self.memo[key] = _MemoEntry(key, Status.ERRORED, [], ran_query=True)
            self._record(StepOutcome(label, kind, Status.ERRORED, error=str(exc)))
            return []
        rendered = substitute(explanation, ctx) if explanation else None
        self.memo[key] = _MemoEntry(key, Status.FIRED, additions, ran_query=True)
        self._record(
            StepOutcome(
                label,
                kind,
                Status.FIRED,
                explanation_md=rendered,
                table=table,
                query_text=text,
                variations=len(additions),
            )
        )
        return self._extend_all(ctx, additions)

    def _extend_all(
        self, ctx: ExecutionContext, additions: Sequence[Dict[str, ContextValue]]
    ) -> List[ExecutionContext]:
        out: List[ExecutionContext] = []
        seen: Set[ExecutionContext] = set()
        for addition in additions:
            extended = ctx.extend(addition, key_cap=self.config.context_key_cap)
            if extended not in seen:
                seen.add(extended)
                out.append(extended)
        return out

    # ------------------------------------------------------------------
    def run_step(self, step_name: str, ctx: ExecutionContext) -> List[ExecutionContext]:
        """Run one named step under one context; returns produced variations."""
        step = self.steps()[step_name]
        kind = step_kind(step)

        # (a) audience gate
        if step.audiences and self.audience not in step.audiences:
            return []

        # (b) required keys
        required = infer_required_keys(step)
        missing = ctx.missing(required)
        if missing:
            marker = f"{step_name}|missing:{','.join(sorted(missing))}"
            if marker not in self._skip_seen:
                self._skip_seen.add(marker)
                self._record(
                    StepOutcome(
                        step_name,
                        kind,
                        Status.SKIPPED_MISSING_KEYS,
                        error=f"missing context keys: {', '.join(sorted(missing))}",
                    )
                )
            return []

        # (c) memoization
        key = memo_key(self.doc.id, step_name, required, ctx)
        if key in self.memo:
            entry = self.memo[key]
            self._record(StepOutcome(step_name, kind, Status.DEDUPLICATED, dedup_of=key))
            return self._extend_all(ctx, entry.additions)

        # (d) filter
        if step.filter:
            try:
                predicate = expr_mod.parse_filter(step.filter)
                value = predicate.eval(expr_mod.Env(placeholders=ctx))
                if value.dtype.value != "bool":
                    raise expr_mod.EvalTypeError("filter must evaluate to bool")
            except (expr_mod.ExprSyntaxError, expr_mod.EvalTypeError) as exc:
                self.memo[key] = _MemoEntry(key, Status.ERRORED, [], ran_query=False)
                self._record(StepOutcome(step_name, kind, Status.ERRORED, error=str(exc)))
                return []
            if not value.value:
                self.memo[key] = _MemoEntry(key, Status.FILTERED_OUT, [], ran_query=False)
                self._record(StepOutcome(step_name, kind, Status.FILTERED_OUT))
                return []

        # (e) execute per kind
        if isinstance(step, CheckDef):
            return self._run_query_step(
                step_name,
                kind,
                ctx,
                required=required,
                source=step.query.source,
                query_text=step.query.query_text,
                explanation=step.query.explanation,
                added=step.query.added_context,
            )
        if isinstance(step, ExplanationDef):
            rendered = substitute(step.explanation, ctx)
            self.memo[key] = _MemoEntry(key, Status.FIRED, [{}], ran_query=False)
            self._record(
                StepOutcome(step_name, kind, Status.FIRED, explanation_md=rendered, variations=1)
            )
            return [ctx]
        assert isinstance(step, ActionDef)
        return self._run_action(step, ctx, key)

    def _run_action(self, step: ActionDef, ctx: ExecutionContext, key: str) -> List[ExecutionContext]:
        try:
            params = {k: substitute(v, ctx) for k, v in step.parameters.items()}
        except MissingKeyError as exc:  # unreachable: gate (b) covers it
            self.memo[key] = _MemoEntry(key, Status.ERRORED, [], ran_query=False)
            self._record(StepOutcome(step.name, "action", Status.ERRORED, error=str(exc)))
            return []

        if step.action_kind is ActionKind.CALL_AUTO_TSG:
            outcome = self._call_auto_tsg(step, params, ctx)
            self.memo[key] = _MemoEntry(
                key, outcome.status, [{}] if outcome.status == Status.FIRED else [], ran_query=False
            )
            self._record(outcome)
            return [ctx] if outcome.status == Status.FIRED else []

        if step.action_kind is ActionKind.CREATE_INCIDENT and self.scoping_keys:
            scoping = ctx.project(self.scoping_keys)
        else:
            scoping = ctx.project(self.config.resource_keys)
        request = ActionRequest(
            tsg_id=self.doc.id,
            step=step.name,
            kind=step.action_kind,
            parameters=params,
            scoping=scoping,
            detected_at=self.clock.now(),
            impactful=step.action_kind in self.config.impactful_kinds,
            ttl=step.throttling.time_to_live if step.throttling else None,
        )
        self.actions.append(request)
        self.memo[key] = _MemoEntry(key, Status.FIRED, [{}], ran_query=False)
        summary = ", ".join(f"{k}={v}" for k, v in params.items())
        self._record(
            StepOutcome(
                step.name,
                "action",
                Status.FIRED,
                explanation_md=f"{step.action_kind.value}: {summary}",
                variations=1,
            )
        )
        return [ctx]

    def _call_auto_tsg(
        self, step: ActionDef, params: Dict[str, str], ctx: ExecutionContext
    ) -> StepOutcome:
        target = params["TargetTsg"]
        if self.depth + 1 > self.config.call_depth_limit:
            return StepOutcome(
                step.name,
                "action",
                Status.ERRORED,
                error=f"call depth limit ({self.config.call_depth_limit}) exceeded calling {target!r}",
            )
        doc = None
        if self.registry is not None:
            doc = self.registry.get_enabled(target)  # type: ignore[attr-defined]
        if doc is None:
            return StepOutcome(
                step.name,
                "action",
                Status.ERRORED,
                error=f"target guide {target!r} is unknown or disabled",
            )
        finding = run_tsg(
            doc,
            ctx,
            self.audience,
            self.clock,
            self.sources,
            registry=self.registry,
            config=self.config,
            depth=self.depth + 1,
            nested_sink=self.nested_findings,
        )
        finding.called_by = f"{self.doc.id}/{step.name}"
        self.nested_findings.append(finding)
        return StepOutcome(
            step.name,
            "action",
            Status.FIRED,
            explanation_md=f"CallAutoTsg: ran {target} "
            f"({'activated' if finding.activated else 'not activated'})",
            variations=1,
        )

    # ------------------------------------------------------------------
    def run_from(
        self, entries: Sequence[Tuple[str, ExecutionContext]]
    ) -> None:
        """Breadth-first traversal from (step, context) seed pairs."""
        steps = self.steps()
        queue = deque(entries)
        while queue:
            step_name, ctx = queue.popleft()
            if step_name not in steps:
                continue
            produced = self.run_step(step_name, ctx)
            for variation in produced:
                for nxt in steps[step_name].next_steps:
                    queue.append((nxt, variation))

    def run_document(self) -> None:
        for index, trigger in enumerate(self.doc.triggers):
            contexts = self.run_trigger(index)
            seeds = [(nxt, ctx) for ctx in contexts for nxt in trigger.next_steps]
            self.run_from(seeds)

    def build_finding(self) -> Finding:
        activated = any(
            o.kind == "trigger" and o.status == Status.FIRED for o in self.outcomes
        )
        headline = next(
            (
                o.explanation_md
                for o in self.outcomes
                if o.kind == "trigger" and o.status == Status.FIRED and o.explanation_md
            ),
            None,
        )
        return Finding(
            tsg_id=self.doc.id,
            version=self.doc.version,
            tsg_type=self.doc.metadata.tsg_type.value,
            topics=self.doc.metadata.topics,
            activated=activated,
            outcomes=self.outcomes,
            actions=self.actions,
            headline=headline,
        )


def evaluate_filter(predicate: str, ctx: ExecutionContext) -> bool:
    """Evaluate a filter predicate against a context; type-aware."""
    node = expr_mod.parse_filter(predicate)
    value = node.eval(expr_mod.Env(placeholders=ctx))
    if value.dtype.value != "bool":
        raise expr_mod.EvalTypeError(
            f"filter must evaluate to bool, got {value.dtype.value}"
        )
    return bool(value.value)


def execute_tsg(
    doc: AutoTsgDoc,
    base: ExecutionContext,
    audience: AudienceTag,
    clock: Clock,
    sources: SourceRegistry,
    *,
    registry=None,
    config: RuntimeConfig = DEFAULT_CONFIG,
    depth: int = 0,
    scoping_keys: Tuple[str, ...] = (),
) -> Tuple[Finding, ExecutionSession]:
    """Run one document and return both the finding and the session (for tests)."""
    session = ExecutionSession(
        doc=doc,
        audience=audience,
        base=base,
        clock=clock,
        sources=sources,
        config=config,
        registry=registry,
        depth=depth,
        scoping_keys=scoping_keys,
    )
    session.run_document()
    return session.build_finding(), session


def run_tsg(
    doc: AutoTsgDoc,
    base: ExecutionContext,
    audience: AudienceTag,
    clock: Clock,
    sources: SourceRegistry,
    *,
    registry=None,
    config: RuntimeConfig = DEFAULT_CONFIG,
    depth: int = 0,
    nested_sink: Optional[List[Finding]] = None,
) -> Finding:
    try:
        finding, session = execute_tsg(
            doc, base, audience, clock, sources,
            registry=registry, config=config, depth=depth,
        )
    except Exception as exc:  # a document must never take down its neighbours
        return Finding(
            tsg_id=doc.id,
            version=doc.version,
            tsg_type=doc.metadata.tsg_type.value,
            topics=doc.metadata.topics,
            activated=False,
            outcomes=[],
            actions=[],
            error=f"{type(exc).__name__}: {exc}",
        )
    if nested_sink is not None:
        nested_sink.extend(session.nested_findings)
    return finding


def run_all(
    docs: Sequence[AutoTsgDoc],
    base: ExecutionContext,
    audience: AudienceTag,
    clock: Clock,
    sources: SourceRegistry,
    *,
    registry=None,
    config: RuntimeConfig = DEFAULT_CONFIG,
) -> List[Finding]:
    """Run every enabled document independently; result order is input order."""
    findings: List[Finding] = []
    for doc in docs:
        if not doc.enabled:
            continue
        nested: List[Finding] = []
        finding = run_tsg(
            doc, base, audience, clock, sources,
            registry=registry, config=config, nested_sink=nested,
        )
        findings.append(finding)
        findings.extend(nested)
    return findings
