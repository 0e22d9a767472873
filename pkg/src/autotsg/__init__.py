"""Decision-graph diagnostics engine.

Troubleshooting guides are YAML decision graphs over telemetry queries;
this package parses, validates, and executes them with deduplicating
context semantics, runs their actions through a throttled runtime, ranks
the findings, and serves the results over HTTP and a CLI.
"""

from .context import ExecutionContext, expand_variations, memo_key, substitute
from .executor import Finding, StepOutcome, evaluate_filter, run_all, run_tsg
from .model import (
    ActionKind,
    AudienceTag,
    AutoTsgDoc,
    ParseError,
    TsgType,
    infer_required_keys,
    parse_document,
)
from .query import Table, TableStore, execute_pipeline, load_table_csv, parse_pipeline
from .validate import ValidationReport, validate_document
from .values import ContextValue, Dtype, parse_value

__all__ = [
    "ActionKind",
    "AudienceTag",
    "AutoTsgDoc",
    "ContextValue",
    "Dtype",
    "ExecutionContext",
    "Finding",
    "ParseError",
    "StepOutcome",
    "Table",
    "TableStore",
    "TsgType",
    "ValidationReport",
    "evaluate_filter",
    "execute_pipeline",
    "expand_variations",
    "infer_required_keys",
    "load_table_csv",
    "memo_key",
    "parse_document",
    "parse_pipeline",
    "parse_value",
    "run_all",
    "run_tsg",
    "substitute",
    "validate_document",
]

__version__ = "0.1.0"
