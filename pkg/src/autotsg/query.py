"""Deterministic tabular query evaluator over locally loaded tables.

The pipeline grammar is the operator subset the guide documents use::

    Table
    | where <predicate>
    | summarize [Name =] agg(...), ... [by k1, k2]     (aggs, groups, or both)
    | summarize by c1, c2                              (distinct)
    | extend Name = <scalar>      ("extends" is an accepted alias)
    | project c1, c2
    | take N

Aggregates: ``count()`` (auto-named ``count_``), ``min(col)`` / ``max(col)``
(auto-named ``min_<col>`` / ``max_<col>``), ``arg_max(keyCol, valCol)``
(auto-named ``arg_max_<valCol>``; returns valCol of the first row attaining
the maximal keyCol), ``make_list(col)`` (auto-named ``list_<col>``; renders
a bracketed, comma-separated string of canonical values in row order).

Row-order rules: ``where`` and ``extend`` preserve input order; group order
is the first appearance of each group key tuple; a global summarize over an
empty input yields an empty table. Unsupported constructs fail at parse
time so authors learn immediately.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Protocol, Sequence, Tuple, Union

from . import expr as expr_mod
from .values import ContextValue, ConversionError, Dtype, parse_value, render_value


class QueryError(ValueError):
    """Parse- or evaluation-time query failure."""


@dataclass(frozen=True)
class Column:
    name: str
    dtype: Dtype


@dataclass
class Table:
    name: str
    columns: List[Column]
    rows: List[tuple]

    def col_index(self, name: str) -> int:
        for i, col in enumerate(self.columns):
            if col.name == name:
                return i
        raise QueryError(f"unknown column {name!r} in table {self.name!r}")

    def schema(self) -> Dict[str, Dtype]:
        return {c.name: c.dtype for c in self.columns}

    def row_env(self, row: tuple) -> Dict[str, ContextValue]:
        return {c.name: ContextValue(c.dtype, cell) for c, cell in zip(self.columns, row)}

    def to_json_obj(self) -> dict:
        return {
            "columns": [{"name": c.name, "type": c.dtype.value} for c in self.columns],
            "rows": [
                [_cell_to_json(c.dtype, cell) for c, cell in zip(self.columns, row)]
                for row in self.rows
            ],
        }

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Table):
            return NotImplemented
        return self.columns == other.columns and self.rows == other.rows


def _cell_to_json(dtype: Dtype, cell) -> Union[str, int, float, bool]:
    if dtype in (Dtype.STRING, Dtype.DATETIME, Dtype.TIMESPAN):
        return render_value(dtype, cell)
    return cell


# ---------------------------------------------------------------------------
# Loading

def load_table_csv(name: str, text: str) -> Table:
    """Build a table from typed-header CSV (``col:type,...`` header row)."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise QueryError(f"table {name!r}: empty CSV, missing header") from None
    columns: List[Column] = []
    for cell in header:
        parts = cell.strip().split(":")
        if len(parts) != 2 or not parts[0]:
            raise QueryError(f"table {name!r}: bad header cell {cell!r}, expected name:type")
        try:
            columns.append(Column(parts[0].strip(), Dtype.from_name(parts[1].strip())))
        except ConversionError as exc:
            raise QueryError(f"table {name!r}: {exc}") from None

    rows: List[tuple] = []
    for lineno, raw in enumerate(reader, start=2):
        if not raw or (len(raw) == 1 and not raw[0].strip()):
            continue
        if len(raw) != len(columns):
            raise QueryError(
                f"table {name!r} row {lineno}: {len(raw)} cells, expected {len(columns)}"
            )
        cells = []
        for col, cell in zip(columns, raw):
            try:
                cells.append(parse_value(cell.strip(), col.dtype).value)
            except ConversionError as exc:
                raise QueryError(f"table {name!r} row {lineno}, column {col.name}: {exc}") from None
        rows.append(tuple(cells))
    return Table(name, columns, rows)


class TableStore:
    """Named tables; loaded once up front, read concurrently afterwards."""

    def __init__(self) -> None:
        self._tables: Dict[str, Table] = {}

    def register(self, table: Table) -> None:
        self._tables[table.name] = table

    def get(self, name: str) -> Table:
        if name not in self._tables:
            raise QueryError(f"unknown table {name!r}")
        return self._tables[name]

    def names(self) -> List[str]:
        return sorted(self._tables)

    def append_rows(self, name: str, rows: Sequence[tuple]) -> None:
        table = self.get(name)
        table.rows.extend(tuple(r) for r in rows)


class QuerySource(Protocol):
    """Executes substituted query text against some telemetry backend."""

    def execute(self, query_text: str) -> Table:  # pragma: no cover - protocol
        ...


class LocalQuerySource:
    """The built-in evaluator: parse then execute against a table store."""

    def __init__(self, store: TableStore):
        self.store = store

    def execute(self, query_text: str) -> Table:
        return execute_pipeline(parse_pipeline(query_text), self.store)


class SourceRegistry:
    """Maps DSL source names (e.g. "Kusto") to query sources."""

    def __init__(self) -> None:
        self._sources: Dict[str, QuerySource] = {}

    def register(self, name: str, source: QuerySource) -> None:
        self._sources[name] = source

    def get(self, name: str) -> QuerySource:
        if name not in self._sources:
            raise QueryError(f"unknown query source {name!r}")
        return self._sources[name]

    @staticmethod
    def local(store: TableStore, names: Sequence[str] = ("Kusto",)) -> "SourceRegistry":
        registry = SourceRegistry()
        source = LocalQuerySource(store)
        for name in names:
            registry.register(name, source)
        return registry


def load_manifest(manifest: Mapping[str, object], base_dir) -> Tuple[TableStore, SourceRegistry]:
    """Fixture manifest: {"sources": [...], "tables": {name: csv path}}."""
    from pathlib import Path

    store = TableStore()
    tables = manifest.get("tables", {})
    if not isinstance(tables, Mapping):
        raise QueryError("manifest 'tables' must be a mapping of name to CSV path")
    for name, rel in tables.items():
        path = Path(base_dir) / str(rel)
        store.register(load_table_csv(name, path.read_text(encoding="utf-8")))
    sources = manifest.get("sources", ["Kusto"])
    return store, SourceRegistry.local(store, [str(s) for s in sources])


# ---------------------------------------------------------------------------
# Plans

@dataclass(frozen=True)
class Aggregate:
    out_name: str
    fn: str  # count | min | max | arg_max | make_list
    args: Tuple[str, ...]


@dataclass(frozen=True)
class Where:
    predicate: expr_mod.Node


@dataclass(frozen=True)
class Summarize:
    aggregates: Tuple[Aggregate, ...]
    by: Tuple[str, ...]


@dataclass(frozen=True)
class Extend:
    name: str
    expression: expr_mod.Node


@dataclass(frozen=True)
class Project:
    columns: Tuple[str, ...]


@dataclass(frozen=True)
class Take:
    count: int


Stage = Union[Where, Summarize, Extend, Project, Take]


@dataclass(frozen=True)
class QueryPlan:
    table: str
    stages: Tuple[Stage, ...] = field(default_factory=tuple)


_AGG_FNS = {"count": 0, "min": 1, "max": 1, "arg_max": 2, "make_list": 1}


class _PipelineParser:
    def __init__(self, text: str):
        self.parser = expr_mod.Parser(
            expr_mod.tokenize(text), allow_columns=True, allow_placeholders=False
        )

    def at_op(self, text: str) -> bool:
        tok = self.parser.peek()
        return tok.kind == "OP" and tok.text == text

    def at_stage_end(self) -> bool:
        tok = self.parser.peek()
        return tok.kind == "EOF" or (tok.kind == "OP" and tok.text == "|")

    def expect_name(self, what: str) -> str:
        tok = self.parser.next()
        if tok.kind != "NAME":
            raise QueryError(f"expected {what}, got {tok.text!r} at offset {tok.pos}")
        return tok.text

    def parse(self) -> QueryPlan:
        table = self.expect_name("a table name")
        stages: List[Stage] = []
        while True:
            tok = self.parser.peek()
            if tok.kind == "EOF":
                break
            if not self.at_op("|"):
                raise QueryError(f"expected '|', got {tok.text!r} at offset {tok.pos}")
            self.parser.next()
            stages.append(self.parse_stage())
        return QueryPlan(table, tuple(stages))

    def parse_stage(self) -> Stage:
        keyword = self.expect_name("an operator")
        if keyword == "where":
            return Where(self.parser.parse_expr())
        if keyword == "summarize":
            return self.parse_summarize()
        if keyword in ("extend", "extends"):
            name = self.expect_name("a column name")
            self.parser.expect_op("=")
            return Extend(name, self.parser.parse_expr())
        if keyword == "project":
            return Project(tuple(self.parse_name_list()))
        if keyword == "take":
            tok = self.parser.next()
            if tok.kind != "LONG":
                raise QueryError(f"take expects an integer, got {tok.text!r}")
            return Take(int(tok.text))
        raise QueryError(f"unknown operator {keyword!r}")

    def parse_name_list(self) -> List[str]:
        names = [self.expect_name("a column name")]
        while self.at_op(","):
            self.parser.next()
            names.append(self.expect_name("a column name"))
        return names

    def parse_summarize(self) -> Summarize:
        tok = self.parser.peek()
        if tok.kind == "NAME" and tok.text == "by":
            self.parser.next()
            return Summarize((), tuple(self.parse_name_list()))
        aggregates = [self.parse_aggregate()]
        while self.at_op(","):
            self.parser.next()
            # a trailing "by" list is not another aggregate
            aggregates.append(self.parse_aggregate())
        by: Tuple[str, ...] = ()
        tok = self.parser.peek()
        if tok.kind == "NAME" and tok.text == "by":
            self.parser.next()
            by = tuple(self.parse_name_list())
        return Summarize(tuple(aggregates), by)

    def parse_aggregate(self) -> Aggregate:
        name = self.expect_name("an aggregate")
        out_name = None
        if self.at_op("="):
            self.parser.next()
            out_name = name
            name = self.expect_name("an aggregate function")
        if name not in _AGG_FNS:
            raise QueryError(f"unknown aggregate {name!r}")
        self.parser.expect_op("(")
        args: List[str] = []
        if not self.at_op(")"):
            args.append(self.expect_name("a column name"))
            while self.at_op(","):
                self.parser.next()
                args.append(self.expect_name("a column name"))
        self.parser.expect_op(")")
        if len(args) != _AGG_FNS[name]:
            raise QueryError(f"{name}() takes {_AGG_FNS[name]} argument(s), got {len(args)}")
        if out_name is None:
            out_name = _auto_name(name, args)
        return Aggregate(out_name, name, tuple(args))


def _auto_name(fn: str, args: Sequence[str]) -> str:
    if fn == "count":
        return "count_"
    if fn == "make_list":
        return f"list_{args[0]}"
    if fn == "arg_max":
        return f"arg_max_{args[1]}"
    return f"{fn}_{args[0]}"


def parse_pipeline(text: str) -> QueryPlan:
    """Parse fully substituted query text into a plan."""
    from .context import PLACEHOLDER_RE

    if PLACEHOLDER_RE.search(text):
        raise QueryError("query text still contains unsubstituted placeholders")
    try:
        return _PipelineParser(text).parse()
    except expr_mod.ExprSyntaxError as exc:
        raise QueryError(str(exc)) from None


# ---------------------------------------------------------------------------
# Execution

def execute_pipeline(plan: QueryPlan, store: TableStore) -> Table:
    table = store.get(plan.table)
    current = Table(table.name, list(table.columns), list(table.rows))
    for stage in plan.stages:
        current = _apply_stage(current, stage)
    return current


def _apply_stage(table: Table, stage: Stage) -> Table:
    if isinstance(stage, Where):
        return _apply_where(table, stage)
    if isinstance(stage, Summarize):
        return _apply_summarize(table, stage)
    if isinstance(stage, Extend):
        return _apply_extend(table, stage)
    if isinstance(stage, Project):
        if len(set(stage.columns)) != len(stage.columns):
            raise QueryError("project lists a column twice")
        indices = [table.col_index(c) for c in stage.columns]
        cols = [table.columns[i] for i in indices]
        return Table(table.name, cols, [tuple(r[i] for i in indices) for r in table.rows])
    if isinstance(stage, Take):
        return Table(table.name, list(table.columns), table.rows[: stage.count])
    raise QueryError(f"unknown stage {stage!r}")


def _apply_where(table: Table, stage: Where) -> Table:
    stage.predicate.infer_dtype(table.schema())
    kept = []
    for row in table.rows:
        result = stage.predicate.eval(expr_mod.Env(columns=table.row_env(row)))
        if result.dtype is not Dtype.BOOL:
            raise QueryError("where predicate must be boolean")
        if result.value:
            kept.append(row)
    return Table(table.name, list(table.columns), kept)


def _apply_extend(table: Table, stage: Extend) -> Table:
    dtype = stage.expression.infer_dtype(table.schema())
    cols = list(table.columns)
    try:
        idx: Optional[int] = table.col_index(stage.name)
    except QueryError:
        idx = None
    rows = []
    for row in table.rows:
        value = stage.expression.eval(expr_mod.Env(columns=table.row_env(row)))
        if idx is None:
            rows.append(row + (value.value,))
        else:
            cells = list(row)
            cells[idx] = value.value
            rows.append(tuple(cells))
    if idx is None:
        cols.append(Column(stage.name, dtype))
    else:
        cols[idx] = Column(stage.name, dtype)
    return Table(table.name, cols, rows)


_MINMAX_DTYPES = (Dtype.LONG, Dtype.REAL, Dtype.STRING, Dtype.DATETIME, Dtype.TIMESPAN)


def _apply_summarize(table: Table, stage: Summarize) -> Table:
    by_idx = [table.col_index(c) for c in stage.by]

    out_names = list(stage.by) + [a.out_name for a in stage.aggregates]
    if len(set(out_names)) != len(out_names):
        raise QueryError("summarize produces duplicate column names")

    if not stage.aggregates:  # distinct form
        cols = [table.columns[i] for i in by_idx]
        seen = set()
        rows = []
        for row in table.rows:
            key = tuple(row[i] for i in by_idx)
            if key not in seen:
                seen.add(key)
                rows.append(key)
        return Table(table.name, cols, rows)

    for agg in stage.aggregates:
        for arg in agg.args:
            table.col_index(arg)
        if agg.fn in ("min", "max"):
            dtype = table.columns[table.col_index(agg.args[0])].dtype
            if dtype not in _MINMAX_DTYPES:
                raise QueryError(f"{agg.fn}() does not support {dtype.value} columns")

    groups: Dict[tuple, List[tuple]] = {}
    order: List[tuple] = []
    for row in table.rows:
        key = tuple(row[i] for i in by_idx)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(row)

    out_cols = [table.columns[i] for i in by_idx]
    for agg in stage.aggregates:
        out_cols.append(Column(agg.out_name, _agg_dtype(table, agg)))

    rows = []
    for key in order:
        members = groups[key]
        cells = list(key)
        for agg in stage.aggregates:
            cells.append(_agg_value(table, agg, members))
        rows.append(tuple(cells))
    return Table(table.name, out_cols, rows)


def _agg_dtype(table: Table, agg: Aggregate) -> Dtype:
    if agg.fn == "count":
        return Dtype.LONG
    if agg.fn == "make_list":
        return Dtype.STRING
    if agg.fn == "arg_max":
        return table.columns[table.col_index(agg.args[1])].dtype
    return table.columns[table.col_index(agg.args[0])].dtype


def _agg_value(table: Table, agg: Aggregate, members: List[tuple]):
    if agg.fn == "count":
        return len(members)
    if agg.fn == "make_list":
        i = table.col_index(agg.args[0])
        dtype = table.columns[i].dtype
        return "[" + ", ".join(render_value(dtype, row[i]) for row in members) + "]"
    if agg.fn == "arg_max":
        ki = table.col_index(agg.args[0])
        vi = table.col_index(agg.args[1])
        best = members[0]
        for row in members[1:]:
            if row[ki] > best[ki]:
                best = row
        return best[vi]
    i = table.col_index(agg.args[0])
    values = [row[i] for row in members]
    return min(values) if agg.fn == "min" else max(values)
