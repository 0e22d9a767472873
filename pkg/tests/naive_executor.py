"""Reference executor with memoization disabled.

Same gate sequence and traversal order as the real executor, but every
(step, context) pair re-runs: no memo table, no dedup. Its output, after
removing duplicate (step, projected-context) entries, must match the
memoized executor's fired set and emitted actions exactly.
"""

from __future__ import annotations

from collections import deque
from typing import List, Set, Tuple

from autotsg import expr as X
from autotsg.context import ExecutionContext, expand_variations, memo_key, substitute
from autotsg.model import (
    ActionDef,
    AudienceTag,
    AutoTsgDoc,
    CheckDef,
    ExplanationDef,
    infer_required_keys,
)


class NaiveRun:
    def __init__(self):
        self.fired: Set[Tuple[str, str]] = set()  # (step label, memo-style key)
        self.actions: Set[Tuple[str, tuple, str]] = set()
        self.executions = 0


MAX_EXECUTIONS = 50_000


def run_naive(
    doc: AutoTsgDoc,
    base: ExecutionContext,
    audience: AudienceTag,
    sources,
    resource_keys=("ServerName", "DatabaseName"),
) -> NaiveRun:
    run = NaiveRun()
    steps = doc.step_map()
    queue = deque()

    for index, trigger in enumerate(doc.triggers):
        if audience not in trigger.audiences:
            continue
        contexts = [base]
        single = len(trigger.queries) == 1
        for qi, query in enumerate(trigger.queries):
            label = f"trigger[{index}]" if single else f"trigger[{index}].q{qi}"
            next_contexts: List[ExecutionContext] = []
            for ctx in contexts:
                required = query.required_keys()
                if ctx.missing(required):
                    continue
                run.executions += 1
                table = sources.get(query.source).execute(substitute(query.query_text, ctx))
                if not table.rows:
                    continue
                run.fired.add((label, memo_key(doc.id, label, required, ctx)))
                next_contexts.extend(
                    expand_variations(ctx, table, query.added_context or None)
                )
            seen = set()
            deduped = []
            for ctx in next_contexts:
                if ctx not in seen:
                    seen.add(ctx)
                    deduped.append(ctx)
            contexts = deduped
            if not contexts:
                break
        for ctx in contexts:
            for nxt in trigger.next_steps:
                queue.append((nxt, ctx))

    while queue:
        if run.executions > MAX_EXECUTIONS:
            raise RuntimeError("naive executor blew the execution budget")
        step_name, ctx = queue.popleft()
        step = steps[step_name]
        if step.audiences and audience not in step.audiences:
            continue
        required = infer_required_keys(step)
        if ctx.missing(required):
            continue
        if step.filter:
            value = X.parse_filter(step.filter).eval(X.Env(placeholders=ctx))
            if not value.value:
                continue

        produced: List[ExecutionContext]
        if isinstance(step, CheckDef):
            run.executions += 1
            table = sources.get(step.query.source).execute(
                substitute(step.query.query_text, ctx)
            )
            if not table.rows:
                continue
            run.fired.add((step_name, memo_key(doc.id, step_name, required, ctx)))
            produced = expand_variations(ctx, table, step.query.added_context or None)
        elif isinstance(step, ExplanationDef):
            substitute(step.explanation, ctx)
            run.fired.add((step_name, memo_key(doc.id, step_name, required, ctx)))
            produced = [ctx]
        else:
            assert isinstance(step, ActionDef)
            params = tuple(
                sorted((k, substitute(v, ctx)) for k, v in step.parameters.items())
            )
            run.fired.add((step_name, memo_key(doc.id, step_name, required, ctx)))
            run.actions.add((step_name, params, ctx.project(resource_keys).canonical()))
            produced = [ctx]

        for variation in produced:
            for nxt in step.next_steps:
                queue.append((nxt, variation))
    return run
