"""Execution contexts: the typed key-value facts that flow through a graph.

A context is an immutable map of key name to :class:`ContextValue`. Steps
extend contexts with values extracted from query rows; the distinct
extended contexts ("variations") drive downstream execution. Two contexts
are interchangeable for a step when they agree on the step's required
keys, which is what :func:`memo_key` captures for deduplication.
"""

from __future__ import annotations

import json
import re
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Set

from .values import ContextValue, Dtype, parse_value

PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")
_TOKEN_RE = re.compile(r"\{\{|\}\}|\{([A-Za-z_][A-Za-z0-9_]*)\}")

DEFAULT_CONTEXT_KEY_CAP = 256


class MissingKeyError(KeyError):
    """A template referenced keys absent from the context."""

    def __init__(self, keys: Iterable[str]):
        self.keys = sorted(set(keys))
        super().__init__(", ".join(self.keys))

    def __str__(self) -> str:
        return f"missing context keys: {', '.join(self.keys)}"


class ContextSizeError(RuntimeError):
    """A context grew past the configured key cap."""


class ExecutionContext(Mapping[str, ContextValue]):
    """Immutable typed key-value map with shadowing extension."""

    __slots__ = ("_entries",)

    def __init__(self, entries: Optional[Mapping[str, ContextValue]] = None):
        self._entries: Dict[str, ContextValue] = dict(entries or {})

    def __getitem__(self, key: str) -> ContextValue:
        return self._entries[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, ExecutionContext):
            return self._entries == other._entries
        return NotImplemented

    def __hash__(self) -> int:
        return hash(frozenset(self._entries.items()))

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}={v.render()}" for k, v in sorted(self._entries.items()))
        return f"ExecutionContext({inner})"

    def extend(
        self,
        additions: Mapping[str, ContextValue],
        *,
        key_cap: int = DEFAULT_CONTEXT_KEY_CAP,
    ) -> "ExecutionContext":
        """Union with ``additions``; on key collision the new value shadows."""
        if not additions:
            return self
        merged = dict(self._entries)
        merged.update(additions)
        if merged == self._entries:
            return self
        if len(merged) > key_cap:
            raise ContextSizeError(
                f"context exceeds {key_cap} keys after extension"
            )
        return ExecutionContext(merged)

    def project(self, required: Iterable[str]) -> "ExecutionContext":
        """Restriction of the context to the required key set."""
        wanted = set(required)
        return ExecutionContext({k: v for k, v in self._entries.items() if k in wanted})

    def missing(self, required: Iterable[str]) -> Set[str]:
        return {k for k in required if k not in self._entries}

    def canonical(self) -> str:
        """Stable serialization: sorted keys, canonical value renderings."""
        return json.dumps(
            {k: [v.dtype.value, v.render()] for k, v in sorted(self._entries.items())},
            separators=(",", ":"),
        )

    def to_json_obj(self) -> Dict[str, Dict[str, str]]:
        return {
            k: {"type": v.dtype.value, "value": v.render()}
            for k, v in sorted(self._entries.items())
        }

    @staticmethod
    def from_json_obj(obj: Mapping[str, Mapping[str, object]]) -> "ExecutionContext":
        entries = {}
        for key, spec in obj.items():
            entries[key] = parse_value(spec["value"], str(spec["type"]))
        return ExecutionContext(entries)


def placeholder_keys(template: str) -> Set[str]:
    """All ``{Name}`` placeholder keys in a template; ``{{``/``}}`` are escapes."""
    keys: Set[str] = set()
    for m in _TOKEN_RE.finditer(template):
        if m.group(0) in ("{{", "}}"):
            continue
        keys.add(m.group(1))
    return keys


def substitute(template: str, ctx: Mapping[str, ContextValue]) -> str:
    """Replace every placeholder with the canonical rendering of its value.

    Raises :class:`MissingKeyError` listing all unresolved keys; the caller
    decides whether that means skip or fail.
    """
    missing = [
        m.group(1)
        for m in _TOKEN_RE.finditer(template)
        if m.group(1) is not None and m.group(1) not in ctx
    ]
    if missing:
        raise MissingKeyError(missing)

    def repl(m: "re.Match[str]") -> str:
        tok = m.group(0)
        if tok == "{{":
            return "{"
        if tok == "}}":
            return "}"
        return ctx[m.group(1)].render()

    return _TOKEN_RE.sub(repl, template)


def extract_additions(rows_table, added: Mapping[str, Dtype]) -> List[Dict[str, ContextValue]]:
    """Per-row key additions declared by an AddedContext block, duplicates removed.

    ``rows_table`` is any object with ``columns`` (list of (name, dtype)
    pairs or objects with .name/.dtype) and ``rows`` (list of tuples).
    Row order is preserved; the first occurrence of a duplicate wins.
    """
    columns = [
        (c.name, c.dtype) if hasattr(c, "name") else (c[0], c[1])
        for c in rows_table.columns
    ]
    index = {name: i for i, (name, _) in enumerate(columns)}
    for key in added:
        if key not in index:
            raise KeyError(f"declared context column {key!r} missing from query result")

    out: List[Dict[str, ContextValue]] = []
    seen = set()
    for row in rows_table.rows:
        addition: Dict[str, ContextValue] = {}
        for key, declared in added.items():
            col_dtype = columns[index[key]][1]
            cell = row[index[key]]
            if col_dtype == declared:
                addition[key] = ContextValue(Dtype(declared), cell)
            else:
                from .values import render_value

                addition[key] = parse_value(render_value(Dtype(col_dtype), cell), declared)
        marker = tuple(sorted((k, v) for k, v in addition.items()))
        if marker not in seen:
            seen.add(marker)
            out.append(addition)
    return out


def expand_variations(
    base: ExecutionContext,
    rows_table,
    added: Optional[Mapping[str, Dtype]],
    *,
    key_cap: int = DEFAULT_CONTEXT_KEY_CAP,
) -> List[ExecutionContext]:
    """One extended context per distinct row addition, in first-row order.

    With no AddedContext declared, a non-empty result passes the base
    context through unchanged and an empty result produces nothing.
    """
    if not added:
        return [base] if rows_table.rows else []
    contexts: List[ExecutionContext] = []
    seen = set()
    for addition in extract_additions(rows_table, added):
        ctx = base.extend(addition, key_cap=key_cap)
        if ctx not in seen:
            seen.add(ctx)
            contexts.append(ctx)
    return contexts


def memo_key(
    doc_id: str,
    step_name: str,
    required: Iterable[str],
    ctx: ExecutionContext,
) -> str:
    """Canonical identity of one step execution: step plus projected context."""
    return f"{doc_id}::{step_name}::{ctx.project(required).canonical()}"
