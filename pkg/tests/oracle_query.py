"""Brute-force reference evaluator for query plans.

Written independently of the engine's execution code on purpose: it walks
the shared AST with its own little interpreter and re-implements every
stage as plain row loops, so the two can disagree. Used as the oracle for
the random-equivalence acceptance suite.
"""

from __future__ import annotations

from autotsg import expr as X
from autotsg.query import (
    Column,
    Extend,
    Project,
    QueryPlan,
    Summarize,
    Table,
    Take,
    Where,
)
from autotsg.values import Dtype, render_value


class OracleError(Exception):
    pass


def _eval(node, row_values, columns):
    """(dtype, python value) interpretation of an expression node."""
    if isinstance(node, X.Literal):
        return node.value.dtype, node.value.value
    if isinstance(node, X.ColumnRef):
        for i, col in enumerate(columns):
            if col.name == node.name:
                return col.dtype, row_values[i]
        raise OracleError(f"no column {node.name}")
    if isinstance(node, X.Negate):
        dtype, value = _eval(node.inner, row_values, columns)
        if dtype not in (Dtype.LONG, Dtype.REAL, Dtype.TIMESPAN):
            raise OracleError("bad negate")
        return dtype, -value
    if isinstance(node, X.BoolOp):
        results = []
        for part in node.parts:
            dtype, value = _eval(part, row_values, columns)
            if dtype is not Dtype.BOOL:
                raise OracleError("non-bool operand")
            results.append(value)
            # mirror short-circuit so error behavior matches
            if node.op == "and" and not value:
                return Dtype.BOOL, False
            if node.op == "or" and value:
                return Dtype.BOOL, True
        return Dtype.BOOL, all(results) if node.op == "and" else any(results)
    if isinstance(node, X.Compare):
        lt, lv = _eval(node.left, row_values, columns)
        rt, rv = _eval(node.right, row_values, columns)
        numeric = {Dtype.LONG, Dtype.REAL}
        if lt != rt and not (lt in numeric and rt in numeric):
            raise OracleError("type mismatch")
        if node.op == "==":
            return Dtype.BOOL, lv == rv
        if node.op == "!=":
            return Dtype.BOOL, lv != rv
        if lt is Dtype.BOOL or rt is Dtype.BOOL:
            raise OracleError("bool ordering")
        table = {">": lv > rv, ">=": lv >= rv, "<": lv < rv, "<=": lv <= rv}
        return Dtype.BOOL, table[node.op]
    if isinstance(node, X.Arith):
        lt, lv = _eval(node.left, row_values, columns)
        rt, rv = _eval(node.right, row_values, columns)
        out = _arith_type(node.op, lt, rt)
        value = lv + rv if node.op == "+" else lv - rv
        if out is Dtype.REAL:
            value = float(value)
        return out, value
    raise OracleError(f"unknown node {node!r}")


def _arith_type(op, lt, rt):
    numeric = {Dtype.LONG, Dtype.REAL}
    if lt in numeric and rt in numeric:
        return Dtype.REAL if Dtype.REAL in (lt, rt) else Dtype.LONG
    if lt is Dtype.TIMESPAN and rt is Dtype.TIMESPAN:
        return Dtype.TIMESPAN
    if lt is Dtype.DATETIME and rt is Dtype.TIMESPAN:
        return Dtype.DATETIME
    if op == "+" and lt is Dtype.TIMESPAN and rt is Dtype.DATETIME:
        return Dtype.DATETIME
    if op == "-" and lt is Dtype.DATETIME and rt is Dtype.DATETIME:
        return Dtype.TIMESPAN
    raise OracleError("bad arithmetic types")


def _static_type(node, columns):
    if isinstance(node, X.Literal):
        return node.value.dtype
    if isinstance(node, X.ColumnRef):
        for col in columns:
            if col.name == node.name:
                return col.dtype
        raise OracleError(f"no column {node.name}")
    if isinstance(node, X.Negate):
        return _static_type(node.inner, columns)
    if isinstance(node, (X.BoolOp, X.Compare)):
        return Dtype.BOOL
    if isinstance(node, X.Arith):
        return _arith_type(
            node.op, _static_type(node.left, columns), _static_type(node.right, columns)
        )
    raise OracleError("unknown node")


def evaluate_plan(plan: QueryPlan, tables) -> Table:
    source = tables[plan.table] if isinstance(tables, dict) else tables.get(plan.table)
    columns = list(source.columns)
    rows = [list(r) for r in source.rows]

    for stage in plan.stages:
        if isinstance(stage, Where):
            kept = []
            for row in rows:
                dtype, value = _eval(stage.predicate, row, columns)
                if dtype is not Dtype.BOOL:
                    raise OracleError("where not bool")
                if value:
                    kept.append(row)
            rows = kept
        elif isinstance(stage, Take):
            rows = rows[: stage.count]
        elif isinstance(stage, Project):
            if len(set(stage.columns)) != len(stage.columns):
                raise OracleError("duplicate project columns")
            idx = []
            for name in stage.columns:
                matches = [i for i, c in enumerate(columns) if c.name == name]
                if not matches:
                    raise OracleError(f"no column {name}")
                idx.append(matches[0])
            columns = [columns[i] for i in idx]
            rows = [[row[i] for i in idx] for row in rows]
        elif isinstance(stage, Extend):
            out_type = _static_type(stage.expression, columns)
            existing = [i for i, c in enumerate(columns) if c.name == stage.name]
            new_rows = []
            for row in rows:
                _, value = _eval(stage.expression, row, columns)
                if out_type is Dtype.REAL:
                    value = float(value)
                if existing:
                    row = list(row)
                    row[existing[0]] = value
                else:
                    row = list(row) + [value]
                new_rows.append(row)
            rows = new_rows
            if existing:
                columns[existing[0]] = Column(stage.name, out_type)
            else:
                columns = columns + [Column(stage.name, out_type)]
        elif isinstance(stage, Summarize):
            columns, rows = _summarize(stage, columns, rows)
        else:
            raise OracleError(f"unknown stage {stage}")
    return Table(source.name, columns, [tuple(r) for r in rows])


def _summarize(stage: Summarize, columns, rows):
    def col_index(name):
        for i, c in enumerate(columns):
            if c.name == name:
                return i
        raise OracleError(f"no column {name}")

    by_idx = [col_index(n) for n in stage.by]

    out_names = list(stage.by) + [a.out_name for a in stage.aggregates]
    if len(set(out_names)) != len(out_names):
        raise OracleError("duplicate output columns")

    if not stage.aggregates:
        seen = []
        for row in rows:
            key = tuple(row[i] for i in by_idx)
            if key not in seen:
                seen.append(key)
        return [columns[i] for i in by_idx], [list(k) for k in seen]

    order = []
    groups = {}
    for row in rows:
        key = tuple(row[i] for i in by_idx)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(row)

    orderable = (Dtype.LONG, Dtype.REAL, Dtype.STRING, Dtype.DATETIME, Dtype.TIMESPAN)
    out_cols = [columns[i] for i in by_idx]
    for agg in stage.aggregates:
        if agg.fn == "count":
            out_cols.append(Column(agg.out_name, Dtype.LONG))
        elif agg.fn == "make_list":
            col_index(agg.args[0])
            out_cols.append(Column(agg.out_name, Dtype.STRING))
        elif agg.fn == "arg_max":
            col_index(agg.args[0])
            out_cols.append(Column(agg.out_name, columns[col_index(agg.args[1])].dtype))
        else:
            dtype = columns[col_index(agg.args[0])].dtype
            if dtype not in orderable:
                raise OracleError("min/max over unorderable type")
            out_cols.append(Column(agg.out_name, dtype))

    out_rows = []
    for key in order:
        members = groups[key]
        row = list(key)
        for agg in stage.aggregates:
            if agg.fn == "count":
                row.append(len(members))
            elif agg.fn == "make_list":
                i = col_index(agg.args[0])
                dtype = columns[i].dtype
                row.append("[" + ", ".join(render_value(dtype, m[i]) for m in members) + "]")
            elif agg.fn == "arg_max":
                ki, vi = col_index(agg.args[0]), col_index(agg.args[1])
                best = members[0]
                for m in members[1:]:
                    if m[ki] > best[ki]:
                        best = m
                row.append(best[vi])
            elif agg.fn == "min":
                i = col_index(agg.args[0])
                row.append(min(m[i] for m in members))
            else:
                i = col_index(agg.args[0])
                row.append(max(m[i] for m in members))
        out_rows.append(row)
    return out_cols, out_rows
