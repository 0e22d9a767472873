import json
from pathlib import Path

import pytest

from autotsg.clock import VirtualClock
from autotsg.context import ExecutionContext
from autotsg.model import parse_document
from autotsg.query import SourceRegistry, load_manifest
from autotsg.values import parse_datetime, parse_value

REPO = Path(__file__).resolve().parent.parent
DEMO = REPO / "demo"
GOLDEN = Path(__file__).resolve().parent / "data" / "golden"


@pytest.fixture(scope="session")
def snippet1_text() -> str:
    return (DEMO / "tsgs" / "recent-upgrades.yaml").read_text(encoding="utf-8")


@pytest.fixture()
def snippet1_doc(snippet1_text):
    return parse_document(snippet1_text, doc_id="recent-upgrades")


@pytest.fixture(scope="session")
def scheduled_text() -> str:
    return (DEMO / "tsgs" / "scheduled-long-upgrades.yaml").read_text(encoding="utf-8")


@pytest.fixture()
def scheduled_doc(scheduled_text):
    return parse_document(scheduled_text, doc_id="scheduled-long-upgrades")


@pytest.fixture()
def demo_store():
    manifest = json.loads((DEMO / "manifest.json").read_text(encoding="utf-8"))
    return load_manifest(manifest, DEMO)


@pytest.fixture()
def demo_sources(demo_store) -> SourceRegistry:
    return demo_store[1]


@pytest.fixture()
def a1_base() -> ExecutionContext:
    return ExecutionContext(
        {
            "ServerName": parse_value("s1", "string"),
            "DatabaseName": parse_value("db1", "string"),
            "StartTime": parse_value("2024-03-10T08:00:00Z", "datetime"),
            "EndTime": parse_value("2024-03-10T12:00:00Z", "datetime"),
        }
    )


@pytest.fixture()
def clock():
    return VirtualClock(parse_datetime("2024-03-10T12:00:00Z"))
