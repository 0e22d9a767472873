import pytest
from hypothesis import given, strategies as st

from autotsg.context import (
    ContextSizeError,
    ExecutionContext,
    MissingKeyError,
    expand_variations,
    memo_key,
    placeholder_keys,
    substitute,
)
from autotsg.query import Column, Table
from autotsg.values import ContextValue, Dtype


def ctx(**kwargs) -> ExecutionContext:
    entries = {}
    for key, value in kwargs.items():
        if isinstance(value, int):
            entries[key] = ContextValue.long(value)
        else:
            entries[key] = ContextValue.string(value)
    return ExecutionContext(entries)


def test_substitute_basic():
    c = ctx(DatabaseName="db1")
    assert substitute("DB **{DatabaseName}**", c) == "DB **db1**"
    assert substitute("no placeholders", ExecutionContext()) == "no placeholders"
    assert substitute("{A}-{A}", ctx(A=7)) == "7-7"


def test_substitute_escapes_braces():
    assert substitute("{{literal}} {A}", ctx(A=1)) == "{literal} 1"


def test_substitute_missing_lists_all_keys():
    with pytest.raises(MissingKeyError) as err:
        substitute("{A} {B} {A}", ExecutionContext())
    assert err.value.keys == ["A", "B"]


def test_placeholder_keys():
    assert placeholder_keys("x {A} y {B_2} {{not}} {9bad}") == {"A", "B_2"}
    assert placeholder_keys("") == set()


def test_placeholder_keys_monotone_under_concatenation():
    t1, t2 = "{A} and {B}", "{B} or {C}"
    assert placeholder_keys(t1 + t2) == placeholder_keys(t1) | placeholder_keys(t2)


def test_extend_shadows_and_is_noop_on_equal():
    base = ctx(A=1)
    same = base.extend({"A": ContextValue.long(1)})
    assert same is base
    shadowed = base.extend({"A": ContextValue.long(2)})
    assert shadowed["A"].value == 2
    assert base["A"].value == 1


def test_extend_enforces_key_cap():
    base = ExecutionContext()
    with pytest.raises(ContextSizeError):
        base.extend({f"K{i}": ContextValue.long(i) for i in range(10)}, key_cap=5)


def test_project():
    c = ctx(A=1, B=2)
    assert dict(c.project({"A"})) == {"A": ContextValue.long(1)}
    assert len(c.project(set())) == 0


def _table(rows):
    return Table("T", [Column("Op", Dtype.LONG)], rows)


def test_expand_variations_dedups_rows_in_order():
    base = ctx(S="x")
    table = _table([(1,), (1,), (2,)])
    out = expand_variations(base, table, {"Op": Dtype.LONG})
    assert [c["Op"].value for c in out] == [1, 2]
    assert all(c["S"].value == "x" for c in out)


def test_expand_variations_no_added_context():
    base = ctx(S="x")
    assert expand_variations(base, _table([(1,)]), None) == [base]
    assert expand_variations(base, _table([]), {"Op": Dtype.LONG}) == []
    assert expand_variations(base, _table([]), None) == []


def test_expand_variations_converts_cross_type():
    base = ExecutionContext()
    out = expand_variations(base, _table([(5,)]), {"Op": Dtype.STRING})
    assert out[0]["Op"] == ContextValue.string("5")


def test_expand_missing_column():
    with pytest.raises(KeyError, match="Missing"):
        expand_variations(ExecutionContext(), _table([(1,)]), {"Missing": Dtype.LONG})


def test_memo_key_depends_only_on_projection():
    c1, c2 = ctx(A=1, B=2), ctx(A=1, B=9)
    assert memo_key("d", "s", {"A"}, c1) == memo_key("d", "s", {"A"}, c2)
    assert memo_key("d", "s", {"A"}, ctx(A=1)) != memo_key("d", "s", {"A"}, ctx(A=2))
    assert memo_key("d", "s", {"A"}, c1) != memo_key("d", "other", {"A"}, c1)


# -- properties ---------------------------------------------------------------

_values = st.one_of(
    st.integers(min_value=-100, max_value=100).map(ContextValue.long),
    st.text(alphabet="abcXYZ", max_size=5).map(ContextValue.string),
    st.booleans().map(ContextValue.boolean),
)
_contexts = st.dictionaries(
    st.sampled_from(["A", "B", "C", "D"]), _values, max_size=4
).map(ExecutionContext)


@given(_contexts, _contexts, _contexts)
def test_memo_key_equality_is_equivalence(c1, c2, c3):
    req = {"A", "B"}

    def key(c):
        return memo_key("d", "s", req, c)

    assert key(c1) == key(c1)  # reflexive
    if key(c1) == key(c2):
        assert key(c2) == key(c1)  # symmetric
    if key(c1) == key(c2) and key(c2) == key(c3):
        assert key(c1) == key(c3)  # transitive
    # soundness: equal keys iff equal projections
    assert (key(c1) == key(c2)) == (c1.project(req) == c2.project(req))


@given(_contexts)
def test_substitution_depends_only_on_projection(c):
    template = "{A}|{B}"
    keys = placeholder_keys(template)
    if c.missing(keys):
        return
    assert substitute(template, c) == substitute(template, c.project(keys))


def test_expand_three_distinct_rows_yield_three_contexts():
    from datetime import datetime, timedelta, timezone

    base = ctx(S="x")
    table = Table(
        "Ops",
        [
            Column("OperationId", Dtype.LONG),
            Column("Duration", Dtype.TIMESPAN),
            Column("State", Dtype.STRING),
        ],
        [
            (1, timedelta(hours=2), "Running"),
            (2, timedelta(minutes=5), "Complete"),
            (3, timedelta(hours=1), "Starting"),
        ],
    )
    out = expand_variations(
        base,
        table,
        {"OperationId": Dtype.LONG, "Duration": Dtype.TIMESPAN, "State": Dtype.STRING},
    )
    assert len(out) == 3
    assert all(len(c) == 4 for c in out)
    assert [c["OperationId"].value for c in out] == [1, 2, 3]
