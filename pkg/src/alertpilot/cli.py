"""Command line entry point: ``alertpilot <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .errors import AlertPilotError, InputError, LlmResponseUnparseable, ScopingFailed, UnknownField
from .llm import HttpLlm, LlmClient, ScriptedLlm
from .logstore import LogStore, parse_query
from .parsing import DrainParams, parse_all
from .promql import load_alert
from .scoping import ToolCache, scope_logs

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_SCOPING_FAILED = 2
EXIT_UNPARSEABLE = 3
EXIT_INPUT = 4

SCOPED_JSONL = "scoped.jsonl"
CATALOG_JSONL = "catalog.jsonl"
ASSIGNMENTS_JSONL = "assignments.jsonl"
CHAINS_JSONL = "chains.jsonl"
CLUSTERS_JSON = "clusters.json"


def _read_json(path: str | Path, what: str):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read {what} {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{what} {path} is not valid JSON: {exc}") from None


def _store(path: str) -> LogStore:
    store = LogStore()
    store.ingest_jsonl(path)
    return store


def _llm(args) -> LlmClient:
    if args.mock_scenarios:
        return ScriptedLlm.from_file(args.mock_scenarios)
    return HttpLlm.from_env()


def _drain(args) -> DrainParams:
    return DrainParams(tree_depth=args.drain_depth, sim_threshold=args.drain_sim)


def _emit(lines, out_dir: str | None, name: str) -> None:
    """Write JSON lines to ``out_dir/name``, or stdout when no directory is given."""
    text = "".join(json.dumps(doc, ensure_ascii=False) + "\n" for doc in lines)
    if out_dir is None:
        sys.stdout.write(text)
        return
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _assignments(args, store: LogStore) -> dict[int, str]:
    if args.assignments:
        event_of = {}
        try:
            lines = Path(args.assignments).read_text().splitlines()
        except OSError as exc:
            raise InputError(f"cannot read assignments {args.assignments}: {exc}") from None
        for line in lines:
            if line.strip():
                doc = json.loads(line)
                event_of[int(doc["seq"])] = str(doc["event_id"])
        return event_of
    _, assigned = parse_all(store.records, _drain(args))
    return {a.record_seq: a.event_id for a in assigned}


def _by_request(store: LogStore) -> dict:
    by_request: dict = {}
    for rec in store.records:
        if rec.request_id is not None:
            by_request.setdefault(rec.request_id, []).append(rec)
    return by_request


def _aliases(args) -> dict[str, list[str]] | None:
    if not args.alias_map:
        return None
    doc = _read_json(args.alias_map, "alias map")
    if not isinstance(doc, dict):
        raise InputError("alias map must be a JSON object of field -> [aliases]")
    return {str(k): [str(x) for x in (v if isinstance(v, list) else [v])] for k, v in doc.items()}


# --------------------------------------------------------------------------
# subcommands


def cmd_ingest(args) -> int:
    store = _store(args.logs)
    if not args.query:
        print(json.dumps({
            "records": len(store),
            "rejected": len(store.rejected),
            "requests": len({r.request_id for r in store.records if r.request_id is not None}),
            "fields": sorted(store.field_keys),
        }, indent=2))
        return EXIT_OK
    records = store.execute_query(parse_query(args.query))
    _emit((r.to_json() for r in records), args.out, "query.jsonl")
    return EXIT_OK


def cmd_scope(args) -> int:
    alert = load_alert(args.alert)
    store = _store(args.logs)
    out = Path(args.out)
    cache = ToolCache(out / pipeline.TOOL_CACHE_JSON)
    llm = _llm(args)
    scoped = scope_logs(alert, store, cache, llm, aliases=_aliases(args))
    fetched = store.fetch_by_request_ids(scoped.request_ids)
    records = sorted((r for recs in fetched.values() for r in recs), key=lambda r: (r.ts, r.seq))
    _emit((r.to_json() for r in records), args.out, SCOPED_JSONL)
    print(json.dumps({
        "tool_id": scoped.tool_id,
        "query": scoped.tool.query.to_dsl() if scoped.tool else None,
        "cache_hit": scoped.cache_hit,
        "llm_calls": scoped.llm_calls,
        "matched_records": len(scoped.records),
        "requests": len(scoped.request_ids),
    }, indent=2))
    return EXIT_OK


def cmd_parse(args) -> int:
    store = _store(args.logs)
    catalog, assigned = parse_all(store.records, _drain(args))
    _emit((e.to_json() for e in catalog), args.out, CATALOG_JSONL)
    if args.out:
        _emit(({"seq": a.record_seq, "event_id": a.event_id} for a in assigned), args.out, ASSIGNMENTS_JSONL)
    return EXIT_OK


def cmd_chains(args) -> int:
    store = _store(args.logs)
    event_of = _assignments(args, store)
    by_request = _by_request(store)
    chains = [pipeline.build_chain(rid, recs, event_of) for rid, recs in sorted(by_request.items())]
    _emit((c.to_json() for c in chains), args.out, CHAINS_JSONL)
    return EXIT_OK


def cmd_cluster(args) -> int:
    store = _store(args.logs)
    event_of = _assignments(args, store)
    clusters = pipeline.cluster_requests(_by_request(store), event_of, args.threshold)
    text = json.dumps(clusters.to_json(), indent=2) + "\n"
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / CLUSTERS_JSON).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_diagnose(args) -> int:
    alert = load_alert(args.alert)
    components = _read_json(args.components, "component docs") if args.components else {}
    config = pipeline.PipelineConfig(
        threshold=args.threshold,
        drain=_drain(args),
        render_budget=args.render_budget,
        workers=args.workers,
        aliases=_aliases(args),
        component_info={str(k): str(v) for k, v in components.items()},
    )
    result = pipeline.run_diagnose(alert, args.logs, _llm(args), args.out, args.sop_dir, config)
    sys.stdout.write(result.report.to_markdown())
    sys.stdout.write("\n" + pipeline.report_metrics(result.metrics))
    return EXIT_OK


def cmd_gen_synth(args) -> int:
    from .synth import default_spec, gen_synth

    weights = [float(w) for w in args.weights.split(",")] if args.weights else None
    silent = tuple(int(k) for k in args.silent.split(",")) if args.silent else ()
    spec = default_spec(args.requests, args.patterns, seed=args.seed, weights=weights,
                        n_background=args.background, silent_patterns=silent)
    out = gen_synth(spec, args.out)
    print(json.dumps({
        "log_file": str(out.log_file),
        "alert_file": str(out.alert_file),
        "truth_file": str(out.truth_file),
        "scenario_file": str(out.scenario_file),
        "sop_dir": str(out.sop_dir),
        "components_file": str(out.components_file),
    }, indent=2))
    return EXIT_OK


def cmd_metrics(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        path = path / pipeline.METRICS_JSON
    metrics = pipeline.PipelineMetrics.from_json(_read_json(path, "metrics file"))
    sys.stdout.write(pipeline.report_metrics(metrics))
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="alertpilot", description="Alert-driven log diagnosis pipeline.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def logs(sp):
        sp.add_argument("--logs", required=True, help="JSONL log file")

    def drain(sp):
        sp.add_argument("--drain-depth", type=int, default=DrainParams.tree_depth)
        sp.add_argument("--drain-sim", type=float, default=DrainParams.sim_threshold)

    def llm(sp):
        sp.add_argument("--mock-scenarios", help="scripted LLM rules (JSON); default is the HTTP backend")
        sp.add_argument("--alias-map", help="JSON object mapping alert labels to log field aliases")

    sp = sub.add_parser("ingest", help="load a log file and optionally run a DSL query")
    logs(sp)
    sp.add_argument("--query", help='e.g. FROM 2025-07-01T09:55:00Z TO 2025-07-01T10:00:00Z WHERE level = "error"')
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("scope", help="correlate an alert with its logs")
    logs(sp)
    llm(sp)
    sp.add_argument("--alert", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_scope)

    sp = sub.add_parser("parse", help="extract log templates")
    logs(sp)
    drain(sp)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_parse)

    for name, func, help_ in (("chains", cmd_chains, "build per-request log chains"),
                              ("cluster", cmd_cluster, "cluster requests by event profile")):
        sp = sub.add_parser(name, help=help_)
        logs(sp)
        drain(sp)
        sp.add_argument("--assignments", help="assignments.jsonl from `parse` (parsed on the fly if omitted)")
        sp.add_argument("--out")
        if name == "cluster":
            sp.add_argument("--threshold", type=float, default=pipeline.DEFAULT_THRESHOLD)
        sp.set_defaults(func=func)

    sp = sub.add_parser("diagnose", help="run the full pipeline for one alert")
    logs(sp)
    drain(sp)
    llm(sp)
    sp.add_argument("--alert", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--sop-dir")
    sp.add_argument("--components", help="JSON object of component -> description")
    sp.add_argument("--threshold", type=float, default=pipeline.DEFAULT_THRESHOLD)
    sp.add_argument("--render-budget", type=int, default=pipeline.DEFAULT_RENDER_BUDGET)
    sp.add_argument("--workers", type=int, default=None)
    sp.set_defaults(func=cmd_diagnose)

    sp = sub.add_parser("gen-synth", help="generate a synthetic workload with ground truth")
    sp.add_argument("--requests", type=int, default=200)
    sp.add_argument("--patterns", type=int, default=3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--weights", help="comma-separated pattern weights summing to 1")
    sp.add_argument("--background", type=int, default=None, help="healthy requests (default requests/4)")
    sp.add_argument("--silent", help="comma-separated pattern indices that log failures at info")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_synth)

    sp = sub.add_parser("metrics", help="render a metrics.json as a table")
    sp.add_argument("path", help="metrics.json or a diagnose output directory")
    sp.set_defaults(func=cmd_metrics)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScopingFailed as exc:
        print(f"error [scoping]: {exc}", file=sys.stderr)
        if exc.tool is not None:
            print(f"unreviewed tool: {exc.tool.query.to_dsl()}", file=sys.stderr)
        return EXIT_SCOPING_FAILED
    except LlmResponseUnparseable as exc:
        print(f"error [{getattr(exc, 'stage', args.command)}]: {exc}", file=sys.stderr)
        return EXIT_UNPARSEABLE
    except (InputError, UnknownField, ValueError) as exc:
        print(f"error [{getattr(exc, 'stage', args.command)}]: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except AlertPilotError as exc:
        print(f"error [{getattr(exc, 'stage', args.command)}]: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
