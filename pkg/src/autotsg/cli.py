"""Command-line entry point: validate, run, simulate, schedule-once, serve.

The fastest loop for guide authors: validate a file, run it offline
against CSV fixtures with the stub ranker, or drive scheduled triggers
over a simulated timeline. Exit codes: 0 success, 1 validation/diagnostic
failure, 2 unusable input.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from datetime import timedelta
from pathlib import Path
from typing import Dict, List, Optional

from .actions import IncidentManager, IncidentStore, OperationQueue, TicketRecord
from .clock import EPOCH, VirtualClock
from .config import DEFAULT_CONFIG, RuntimeConfig
from .context import ExecutionContext
from .model import AudienceTag, ParseError, parse_document
from .pipeline import DiagnosticRequest, run_diagnostics
from .query import QueryError, load_manifest, load_table_csv
from .ranking import ProductProfile, ReplayClient, StubRankerClient
from .registry import TsgRegistry
from .render import render_markdown, response_to_json
from .scheduler import Scheduler
from .validate import validate_document
from .values import parse_datetime, parse_timespan


def _read_json(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


def _load_docs(paths: List[str]) -> List:
    docs = []
    for raw in paths:
        path = Path(raw)
        text = path.read_text(encoding="utf-8")
        docs.append(parse_document(text, doc_id=path.stem))
    return docs


def _config_overrides(raw: Optional[Dict]) -> RuntimeConfig:
    if not raw:
        return DEFAULT_CONFIG
    fields = {}
    for key, value in raw.items():
        if key in ("quota_window", "default_incident_ttl", "impact_cooldown", "default_lookback"):
            value = parse_timespan(value) if isinstance(value, str) else timedelta(seconds=value)
        fields[key] = value
    return dataclasses.replace(DEFAULT_CONFIG, **fields)


# ---------------------------------------------------------------------------
# validate

def cmd_validate(args: argparse.Namespace) -> int:
    worst = 0
    for raw in args.paths:
        path = Path(raw)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            print(f"{path}: unreadable: {exc}", file=sys.stderr)
            return 2
        try:
            doc = parse_document(text, doc_id=path.stem)
        except ParseError as exc:
            print(f"{path}: parse error: {exc}")
            worst = max(worst, 1)
            continue
        report = validate_document(doc)
        if args.json:
            print(json.dumps({"path": str(path), "id": doc.id, **report.to_dict()}, indent=2))
        else:
            status = "ok" if report.ok else "INVALID"
            print(f"{path}: {status} (id={doc.id})")
            for issue in report.errors:
                print(f"  error [{issue.code}] {issue.scope}: {issue.message}")
            for issue in report.warnings:
                print(f"  warning [{issue.code}] {issue.scope}: {issue.message}")
        if not report.ok:
            worst = max(worst, 1)
    return worst


# ---------------------------------------------------------------------------
# run

def _build_ranker(args: argparse.Namespace):
    if getattr(args, "replay", None):
        return ReplayClient(Path(args.replay))
    return StubRankerClient()


def cmd_run(args: argparse.Namespace) -> int:
    try:
        docs = _load_docs(args.tsg)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 2
    for doc in docs:
        report = validate_document(doc)
        if not report.ok:
            print(f"{doc.id}: validation failed", file=sys.stderr)
            for issue in report.errors:
                print(f"  error [{issue.code}] {issue.scope}: {issue.message}", file=sys.stderr)
            return 1

    manifest_path = Path(args.fixtures)
    try:
        tables, sources = load_manifest(_read_json(manifest_path), manifest_path.parent)
    except (OSError, QueryError, json.JSONDecodeError) as exc:
        print(f"fixtures: {exc}", file=sys.stderr)
        return 2

    base = ExecutionContext.from_json_obj(_read_json(Path(args.context)))
    audience = AudienceTag(args.audience)
    clock = VirtualClock(parse_datetime(args.now) if args.now else EPOCH)

    ticket = None
    if args.ticket:
        raw = _read_json(Path(args.ticket))
        ticket = TicketRecord(
            ticket_id=str(raw.get("id", "T-0")),
            severity=str(raw.get("severity", DEFAULT_CONFIG.severity_scale[-1])),
            owning_team=str(raw.get("owning_team", "")),
        )

    profile = ProductProfile(description=args.product_description)
    config = DEFAULT_CONFIG
    registry = TsgRegistry(config)
    for doc in docs:
        registry.add(doc)
    store = IncidentStore()
    response = run_diagnostics(
        DiagnosticRequest(
            base=base,
            audience=audience,
            problem_statement=args.problem or "",
            ticket=ticket,
        ),
        docs=docs,
        sources=sources,
        clock=clock,
        client=_build_ranker(args),
        profile=profile,
        incidents=IncidentManager(store, config),
        queue=OperationQueue(config, telemetry=tables),
        registry=registry,
        config=config,
    )
    if args.json:
        sys.stdout.write(response_to_json(response))
    else:
        sys.stdout.write(render_markdown(response))
    return 0


# ---------------------------------------------------------------------------
# simulate / schedule-once

def _print_tick(report, as_json: bool) -> None:
    if as_json:
        print(json.dumps(report.to_dict()))
        return
    for entry in report.entries:
        bits = [
            f"tick {report.at.isoformat()} {entry.tsg_id}#{entry.trigger_index}:",
            "fired" if entry.fired else "no-data",
        ]
        if entry.ensembles:
            bits.append(f"ensembles={entry.ensembles}")
        if entry.incidents_created:
            bits.append(f"created={','.join(entry.incidents_created)}")
        if entry.incidents_deduped:
            bits.append(f"deduped={','.join(entry.incidents_deduped)}")
        if entry.incidents_backed_off:
            bits.append(f"backed_off={entry.incidents_backed_off}")
        if entry.actions_accepted or entry.actions_coalesced or entry.actions_rejected:
            bits.append(
                f"actions={entry.actions_accepted}+/{entry.actions_coalesced}~/"
                f"{entry.actions_rejected}-"
            )
        for error in entry.errors:
            bits.append(f"error: {error}")
        print(" ".join(bits))
    for incident_id in report.mitigated:
        print(f"tick {report.at.isoformat()} mitigated {incident_id}")


def cmd_simulate(args: argparse.Namespace) -> int:
    scenario_path = Path(args.scenario)
    try:
        scenario = _read_json(scenario_path)
        start = parse_datetime(scenario["start"])
        duration = parse_timespan(scenario["duration"])
        doc_paths = [str(scenario_path.parent / p) for p in scenario["tsgs"]]
        docs = _load_docs(doc_paths)
    except (OSError, KeyError, ValueError) as exc:
        print(f"scenario: {exc}", file=sys.stderr)
        return 2

    for doc in docs:
        report = validate_document(doc)
        if not report.ok:
            print(f"scenario: {doc.id} fails validation", file=sys.stderr)
            for issue in report.errors:
                print(f"  error [{issue.code}] {issue.scope}: {issue.message}", file=sys.stderr)
            return 2

    fixtures = scenario.get("fixtures", {})
    tables, sources = load_manifest(fixtures, scenario_path.parent)
    config = _config_overrides(scenario.get("config"))
    clock = VirtualClock(start)
    store = IncidentStore()
    incidents = IncidentManager(store, config)
    queue = OperationQueue(config, telemetry=tables)
    scheduler = Scheduler(docs, clock, sources, incidents, queue, config)

    mutations = sorted(
        (parse_timespan(m["at"]), m) for m in scenario.get("mutations", [])
    )
    mutation_queue = [(start + offset, m) for offset, m in mutations]
    end = start + duration

    while True:
        due = [s.next_due for s in scheduler.states if s.next_due is not None]
        next_tick = min(due) if due else None
        next_mutation = mutation_queue[0][0] if mutation_queue else None
        candidates = [t for t in (next_tick, next_mutation) if t is not None and t <= end]
        if not candidates:
            break
        moment = min(candidates)
        clock.set(moment)
        while mutation_queue and mutation_queue[0][0] <= moment:
            _, mutation = mutation_queue.pop(0)
            csv_path = scenario_path.parent / mutation["csv"]
            tables.register(
                load_table_csv(mutation["table"], csv_path.read_text(encoding="utf-8"))
            )
        if next_tick is not None and moment >= next_tick:
            report = scheduler.tick(moment)
            if report.entries or report.mitigated:
                _print_tick(report, args.json)

    dump = [r.to_dict() for r in store.all_records()]
    if args.json:
        print(json.dumps({"incidents": dump}, indent=2))
    else:
        print(f"--- final incidents ({len(dump)}) ---")
        for record in dump:
            print(
                f"{record['incident_id']} [{record['state']}] {record['title']} "
                f"last_detected={record['last_detected_at']}"
            )
    return 0


def cmd_schedule_once(args: argparse.Namespace) -> int:
    try:
        docs = _load_docs(args.tsg)
        manifest_path = Path(args.fixtures)
        tables, sources = load_manifest(_read_json(manifest_path), manifest_path.parent)
        at = parse_datetime(args.at)
    except (OSError, ValueError, ParseError) as exc:
        print(f"schedule-once: {exc}", file=sys.stderr)
        return 2
    clock = VirtualClock(at)
    store = IncidentStore()
    config = DEFAULT_CONFIG
    incidents = IncidentManager(store, config)
    queue = OperationQueue(config, telemetry=tables)
    scheduler = Scheduler(docs, clock, sources, incidents, queue, config)
    for state in scheduler.states:
        state.next_due = at  # one tick, due now, window one frequency back
    report = scheduler.tick(at)
    _print_tick(report, args.json)
    return 0


# ---------------------------------------------------------------------------
# serve

class ServeConfigError(ValueError):
    pass


def build_service(conf: Dict, config_path: Path):
    """Assemble the app, state, and optional scheduler from a serve config."""
    from .scheduler import Scheduler
    from .service import create_app, default_state, load_rules

    try:
        manifest_path = config_path.parent / conf["fixtures"]
        tables, sources = load_manifest(_read_json(manifest_path), manifest_path.parent)
    except (KeyError, OSError, QueryError, json.JSONDecodeError) as exc:
        raise ServeConfigError(f"fixtures: {exc}") from None

    runtime = _config_overrides(conf.get("config"))
    registry = TsgRegistry(runtime)
    tsg_paths: List[str] = []
    if "tsg_dir" in conf:
        tsg_paths.extend(
            str(p) for p in sorted((config_path.parent / conf["tsg_dir"]).glob("*.yaml"))
        )
    tsg_paths.extend(str(config_path.parent / p) for p in conf.get("tsgs", []))
    try:
        for doc in _load_docs(tsg_paths):
            report = validate_document(doc)
            if not report.ok:
                raise ServeConfigError(f"{doc.id} fails validation: {report.to_dict()}")
            registry.add(doc)
    except (ParseError, OSError) as exc:
        raise ServeConfigError(f"tsgs: {exc}") from None

    ranker_conf = conf.get("ranker", "stub")
    if isinstance(ranker_conf, dict) and "replay" in ranker_conf:
        client = ReplayClient(config_path.parent / ranker_conf["replay"])
    else:
        client = StubRankerClient()

    rules = []
    if conf.get("rules"):
        rules = load_rules(_read_json(config_path.parent / conf["rules"]))

    profile_conf = conf.get("profile", {})
    profile = ProductProfile(
        description=profile_conf.get("description", "(no product profile configured)"),
        display_threshold=profile_conf.get("display_threshold"),
        propose_threshold=profile_conf.get("propose_threshold"),
        execute_threshold=profile_conf.get("execute_threshold"),
    )
    stores = conf.get("stores", {})
    state = default_state(
        registry=registry,
        tables=tables,
        sources=sources,
        profile=profile,
        client=client,
        rules=rules,
        config=runtime,
        incident_journal=(
            config_path.parent / stores["incidents"] if "incidents" in stores else None
        ),
    )
    if "feedback" in stores:
        registry.journal_path = config_path.parent / stores["feedback"]
    app = create_app(state)

    static_dir = conf.get("static_dir")
    if static_dir:
        static_path = config_path.parent / static_dir
        if static_path.is_dir():
            from fastapi.staticfiles import StaticFiles

            app.mount("/", StaticFiles(directory=str(static_path), html=True), name="workbench")

    scheduler = None
    schedule_conf = conf.get("schedule") or {}
    if schedule_conf.get("enabled"):
        wanted = schedule_conf.get("registry")
        if wanted is None:
            docs = registry.enabled_docs()
        else:
            enabled_ids = {e["tsg"] for e in wanted if e.get("enabled", True)}
            docs = [d for d in registry.enabled_docs() if d.id in enabled_ids]
        scheduler = Scheduler(docs, state.clock, sources, state.incidents, state.queue, runtime)
    return app, state, scheduler, schedule_conf


def cmd_serve(args: argparse.Namespace) -> int:
    config_path = Path(args.config)
    try:
        conf = _read_json(config_path)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config: {exc}", file=sys.stderr)
        return 2
    try:
        app, _state, scheduler, schedule_conf = build_service(conf, config_path)
    except ServeConfigError as exc:
        print(f"config: {exc}", file=sys.stderr)
        return 2

    driver = None
    if scheduler is not None:
        from .scheduler import ScheduleDriver

        driver = ScheduleDriver(
            scheduler, poll_seconds=float(schedule_conf.get("poll_seconds", 1.0))
        )
        driver.start()

    import uvicorn

    port = int(args.port or conf.get("port", 8010))
    try:
        uvicorn.run(app, host=args.host, port=port, log_level="info")
    finally:
        if driver is not None:
            driver.stop()
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="autotsg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse and statically validate guide files")
    p.add_argument("paths", nargs="+", help="guide YAML files")
    p.add_argument("--json", action="store_true", help="emit JSON reports")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run guides offline against CSV fixtures")
    p.add_argument("--tsg", action="append", required=True, help="guide YAML (repeatable)")
    p.add_argument("--fixtures", required=True, help="fixture manifest JSON")
    p.add_argument("--context", required=True, help="base context JSON file")
    p.add_argument(
        "--audience",
        default=AudienceTag.INTERNAL_TICKET.value,
        choices=[a.value for a in AudienceTag],
    )
    p.add_argument("--problem", help="problem statement for ranking")
    p.add_argument("--ticket", help="ambient ticket JSON file (id, severity, owning_team)")
    p.add_argument("--stub-ranker", action="store_true", help="use the offline stub (default)")
    p.add_argument("--replay", help="replay file of recorded ranker completions")
    p.add_argument("--now", help="virtual execution time (ISO-8601)")
    p.add_argument("--json", action="store_true", help="emit the JSON response")
    p.add_argument(
        "--product-description",
        default="(no product profile configured)",
        help="product architecture narrative for the ranking prompt",
    )
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("simulate", help="drive scheduled guides over a virtual timeline")
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("schedule-once", help="execute exactly one scheduler tick")
    p.add_argument("--tsg", action="append", required=True)
    p.add_argument("--fixtures", required=True)
    p.add_argument("--at", required=True, help="virtual tick time (ISO-8601)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_schedule_once)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--config", required=True, help="service configuration JSON")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 0


if __name__ == "__main__":
    sys.exit(main())
