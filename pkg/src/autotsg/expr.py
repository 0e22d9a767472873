"""Expression language shared by filter predicates and query pipelines.

Grammar (loosest binding first)::

    expr    := and_e ('or' and_e)*
    and_e   := cmp ('and' cmp)*
    cmp     := sum (('=='|'!='|'>'|'>='|'<'|'<=') sum)?
    sum     := unary (('+'|'-') unary)*
    unary   := '-' unary | primary
    primary := literal | '{Key}' | ColumnName | '(' expr ')'

Literals: quoted strings, longs, reals, duration literals (``1h``, ``30m``,
``2d``, ``90s``), clock timespans (``0.04:00:00.000000``), ``datetime(...)``
and ``true``/``false``. Comparisons are type-aware; ``and`` binds tighter
than ``or`` and both short-circuit. Arithmetic (+, -) covers numbers,
datetimes, and timespans.

Placeholders are resolved from an execution context (filter predicates);
bare names are resolved from a table row (query pipelines). A parse is
told which of the two it should accept.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence, Tuple

from .context import MissingKeyError
from .values import (
    ContextValue,
    ConversionError,
    Dtype,
    parse_datetime,
    parse_timespan,
)


class ExprSyntaxError(ValueError):
    """Malformed expression text, with the offending position."""

    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} (at offset {pos})")
        self.pos = pos


class EvalTypeError(TypeError):
    """Type-incompatible operation during evaluation."""


# ---------------------------------------------------------------------------
# Lexer

_TOKEN_SPEC = [
    ("WS", r"\s+"),
    ("TIMESPAN", r"(?:\d+\.)?\d{1,2}:\d{2}:\d{2}(?:\.\d{1,6})?"),
    ("DURATION", r"\d+(?:\.\d+)?[dhms](?![A-Za-z0-9_])"),
    ("REAL", r"\d+\.\d+(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+"),
    ("LONG", r"\d+"),
    ("STRING", r'"(?:[^"\\]|\\.)*"'),
    ("PLACEHOLDER", r"\{[A-Za-z_][A-Za-z0-9_]*\}"),
    ("NAME", r"[A-Za-z_][A-Za-z0-9_]*"),
    ("OP", r"==|!=|>=|<=|>|<|=|\+|-|\(|\)|\||,"),
]
_MASTER_RE = re.compile("|".join(f"(?P<{n}>{p})" for n, p in _TOKEN_SPEC))

_ESCAPES = {'"': '"', "\\": "\\", "n": "\n", "t": "\t", "r": "\r"}


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    pos: int


def tokenize(text: str) -> List[Token]:
    tokens: List[Token] = []
    pos = 0
    while pos < len(text):
        m = _MASTER_RE.match(text, pos)
        if not m:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup or ""
        tok_text = m.group(0)
        if kind == "NAME" and tok_text == "datetime":
            # datetime(...) captures its raw argument through the closing paren
            after = m.end()
            while after < len(text) and text[after].isspace():
                after += 1
            if after < len(text) and text[after] == "(":
                close = text.find(")", after)
                if close < 0:
                    raise ExprSyntaxError("unterminated datetime(", pos)
                tokens.append(Token("DATETIME", text[after + 1 : close].strip(), pos))
                pos = close + 1
                continue
        if kind != "WS":
            tokens.append(Token(kind, tok_text, pos))
        pos = m.end()
    tokens.append(Token("EOF", "", len(text)))
    return tokens


def _unescape(raw: str) -> str:
    out = []
    i = 1
    while i < len(raw) - 1:
        ch = raw[i]
        if ch == "\\" and i + 1 < len(raw) - 1:
            out.append(_ESCAPES.get(raw[i + 1], raw[i + 1]))
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def escape_string(value: str) -> str:
    """Quote a string for use in expression or query text."""
    return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'


# ---------------------------------------------------------------------------
# AST

class Node:
    def eval(self, env: "Env") -> ContextValue:
        raise NotImplementedError

    def infer_dtype(self, schema: Mapping[str, Dtype]) -> Dtype:
        raise NotImplementedError


@dataclass(frozen=True)
class Literal(Node):
    value: ContextValue

    def eval(self, env: "Env") -> ContextValue:
        return self.value

    def infer_dtype(self, schema: Mapping[str, Dtype]) -> Dtype:
        return self.value.dtype


@dataclass(frozen=True)
class ColumnRef(Node):
    name: str

    def eval(self, env: "Env") -> ContextValue:
        return env.column(self.name)

    def infer_dtype(self, schema: Mapping[str, Dtype]) -> Dtype:
        if self.name not in schema:
            raise EvalTypeError(f"unknown column {self.name!r}")
        return schema[self.name]


@dataclass(frozen=True)
class PlaceholderRef(Node):
    key: str

    def eval(self, env: "Env") -> ContextValue:
        return env.placeholder(self.key)

    def infer_dtype(self, schema: Mapping[str, Dtype]) -> Dtype:
        raise EvalTypeError("placeholders have no static type")


@dataclass(frozen=True)
class Compare(Node):
    op: str
    left: Node
    right: Node

    def eval(self, env: "Env") -> ContextValue:
        return ContextValue.boolean(
            compare_values(self.op, self.left.eval(env), self.right.eval(env))
        )

    def infer_dtype(self, schema: Mapping[str, Dtype]) -> Dtype:
        self.left.infer_dtype(schema)
        self.right.infer_dtype(schema)
        return Dtype.BOOL


@dataclass(frozen=True)
class BoolOp(Node):
    op: str  # "and" | "or"
    parts: Tuple[Node, ...]

    def eval(self, env: "Env") -> ContextValue:
        for part in self.parts:
            value = part.eval(env)
            if value.dtype is not Dtype.BOOL:
                raise EvalTypeError(f"{self.op} operand is {value.dtype.value}, not bool")
            if self.op == "and" and not value.value:
                return ContextValue.boolean(False)
            if self.op == "or" and value.value:
                return ContextValue.boolean(True)
        return ContextValue.boolean(self.op == "and")

    def infer_dtype(self, schema: Mapping[str, Dtype]) -> Dtype:
        for part in self.parts:
            part.infer_dtype(schema)
        return Dtype.BOOL


@dataclass(frozen=True)
class Arith(Node):
    op: str  # "+" | "-"
    left: Node
    right: Node

    def eval(self, env: "Env") -> ContextValue:
        return arith_values(self.op, self.left.eval(env), self.right.eval(env))

    def infer_dtype(self, schema: Mapping[str, Dtype]) -> Dtype:
        return arith_dtype(self.op, self.left.infer_dtype(schema), self.right.infer_dtype(schema))


@dataclass(frozen=True)
class Negate(Node):
    inner: Node

    def eval(self, env: "Env") -> ContextValue:
        v = self.inner.eval(env)
        if v.dtype in (Dtype.LONG, Dtype.REAL):
            return ContextValue(v.dtype, -v.value)
        if v.dtype is Dtype.TIMESPAN:
            return ContextValue.span(-v.value)
        raise EvalTypeError(f"cannot negate {v.dtype.value}")

    def infer_dtype(self, schema: Mapping[str, Dtype]) -> Dtype:
        inner = self.inner.infer_dtype(schema)
        if inner in (Dtype.LONG, Dtype.REAL, Dtype.TIMESPAN):
            return inner
        raise EvalTypeError(f"cannot negate {inner.value}")


class Env:
    """Operand resolution during evaluation."""

    def __init__(
        self,
        columns: Optional[Mapping[str, ContextValue]] = None,
        placeholders: Optional[Mapping[str, ContextValue]] = None,
    ):
        self._columns = columns or {}
        self._placeholders = placeholders

    def column(self, name: str) -> ContextValue:
        if name not in self._columns:
            raise EvalTypeError(f"unknown column {name!r}")
        return self._columns[name]

    def placeholder(self, key: str) -> ContextValue:
        if self._placeholders is None or key not in self._placeholders:
            raise MissingKeyError([key])
        return self._placeholders[key]


_NUMERIC = (Dtype.LONG, Dtype.REAL)
_ORDERED = (Dtype.LONG, Dtype.REAL, Dtype.STRING, Dtype.DATETIME, Dtype.TIMESPAN)


def compare_values(op: str, left: ContextValue, right: ContextValue) -> bool:
    lt, rt = left.dtype, right.dtype
    compatible = lt == rt or (lt in _NUMERIC and rt in _NUMERIC)
    if not compatible:
        raise EvalTypeError(f"cannot compare {lt.value} with {rt.value}")
    if op == "==":
        return left.value == right.value
    if op == "!=":
        return left.value != right.value
    if lt is Dtype.BOOL or rt is Dtype.BOOL:
        raise EvalTypeError("bool supports only == and !=")
    if lt not in _ORDERED:
        raise EvalTypeError(f"{lt.value} is not orderable")
    if op == ">":
        return left.value > right.value
    if op == ">=":
        return left.value >= right.value
    if op == "<":
        return left.value < right.value
    if op == "<=":
        return left.value <= right.value
    raise EvalTypeError(f"unknown comparison {op!r}")


def arith_dtype(op: str, lt: Dtype, rt: Dtype) -> Dtype:
    if lt in _NUMERIC and rt in _NUMERIC:
        return Dtype.REAL if Dtype.REAL in (lt, rt) else Dtype.LONG
    if lt is Dtype.TIMESPAN and rt is Dtype.TIMESPAN:
        return Dtype.TIMESPAN
    if lt is Dtype.DATETIME and rt is Dtype.TIMESPAN:
        return Dtype.DATETIME
    if op == "+" and lt is Dtype.TIMESPAN and rt is Dtype.DATETIME:
        return Dtype.DATETIME
    if op == "-" and lt is Dtype.DATETIME and rt is Dtype.DATETIME:
        return Dtype.TIMESPAN
    raise EvalTypeError(f"cannot apply {op} to {lt.value} and {rt.value}")


def arith_values(op: str, left: ContextValue, right: ContextValue) -> ContextValue:
    out = arith_dtype(op, left.dtype, right.dtype)
    raw = left.value + right.value if op == "+" else left.value - right.value
    if out is Dtype.LONG:
        return ContextValue.long(raw)
    if out is Dtype.REAL:
        return ContextValue.real(float(raw))
    return ContextValue(out, raw)


# ---------------------------------------------------------------------------
# Parser

class Parser:
    def __init__(self, tokens: Sequence[Token], *, allow_columns: bool, allow_placeholders: bool):
        self.tokens = tokens
        self.i = 0
        self.allow_columns = allow_columns
        self.allow_placeholders = allow_placeholders

    def peek(self) -> Token:
        return self.tokens[self.i]

    def next(self) -> Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, text: str) -> Token:
        tok = self.next()
        if tok.kind != "OP" or tok.text != text:
            raise ExprSyntaxError(f"expected {text!r}, got {tok.text!r}", tok.pos)
        return tok

    def parse_expr(self) -> Node:
        parts = [self.parse_and()]
        while self.peek().kind == "NAME" and self.peek().text == "or":
            self.next()
            parts.append(self.parse_and())
        return parts[0] if len(parts) == 1 else BoolOp("or", tuple(parts))

    def parse_and(self) -> Node:
        parts = [self.parse_cmp()]
        while self.peek().kind == "NAME" and self.peek().text == "and":
            self.next()
            parts.append(self.parse_cmp())
        return parts[0] if len(parts) == 1 else BoolOp("and", tuple(parts))

    def parse_cmp(self) -> Node:
        left = self.parse_sum()
        tok = self.peek()
        if tok.kind == "OP" and tok.text in ("==", "!=", ">", ">=", "<", "<="):
            self.next()
            right = self.parse_sum()
            return Compare(tok.text, left, right)
        return left

    def parse_sum(self) -> Node:
        node = self.parse_unary()
        while self.peek().kind == "OP" and self.peek().text in ("+", "-"):
            op = self.next().text
            node = Arith(op, node, self.parse_unary())
        return node

    def parse_unary(self) -> Node:
        tok = self.peek()
        if tok.kind == "OP" and tok.text == "-":
            self.next()
            return Negate(self.parse_unary())
        return self.parse_primary()

    def parse_primary(self) -> Node:
        tok = self.next()
        if tok.kind == "LONG":
            return Literal(ContextValue.long(int(tok.text)))
        if tok.kind == "REAL":
            return Literal(ContextValue.real(float(tok.text)))
        if tok.kind == "STRING":
            return Literal(ContextValue.string(_unescape(tok.text)))
        if tok.kind == "DURATION" or tok.kind == "TIMESPAN":
            try:
                return Literal(ContextValue.span(parse_timespan(tok.text)))
            except ConversionError as exc:
                raise ExprSyntaxError(str(exc), tok.pos) from None
        if tok.kind == "DATETIME":
            raw = tok.text.strip("\"'")
            try:
                return Literal(ContextValue.dt(parse_datetime(raw)))
            except ConversionError as exc:
                raise ExprSyntaxError(str(exc), tok.pos) from None
        if tok.kind == "PLACEHOLDER":
            if not self.allow_placeholders:
                raise ExprSyntaxError("placeholders are not allowed here", tok.pos)
            return PlaceholderRef(tok.text[1:-1])
        if tok.kind == "NAME":
            if tok.text == "true":
                return Literal(ContextValue.boolean(True))
            if tok.text == "false":
                return Literal(ContextValue.boolean(False))
            if not self.allow_columns:
                raise ExprSyntaxError(
                    f"bare name {tok.text!r} is not allowed in a filter predicate", tok.pos
                )
            return ColumnRef(tok.text)
        if tok.kind == "OP" and tok.text == "(":
            inner = self.parse_expr()
            self.expect_op(")")
            return inner
        raise ExprSyntaxError(f"unexpected token {tok.text!r}", tok.pos)


def parse_expression(text: str, *, allow_columns: bool, allow_placeholders: bool) -> Node:
    parser = Parser(
        tokenize(text), allow_columns=allow_columns, allow_placeholders=allow_placeholders
    )
    node = parser.parse_expr()
    trailing = parser.peek()
    if trailing.kind != "EOF":
        raise ExprSyntaxError(f"unexpected trailing {trailing.text!r}", trailing.pos)
    return node


def parse_filter(text: str) -> Node:
    """Predicate over context placeholders and literals."""
    return parse_expression(text, allow_columns=False, allow_placeholders=True)
