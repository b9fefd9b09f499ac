"""End-to-end orchestration of scoping, request processing and diagnosis."""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from .chains import DEFAULT_RENDER_BUDGET, LogChain, build_chain, first_messages, render_chain
from .clustering import DEFAULT_THRESHOLD, ClusterSet, build_vocabulary, embed_request, hac_cluster
from .diagnosis import (
    DEFAULT_SOP_K, AlertDiagnosisReport, LogQualityConfig, SopIndex, SOPDocument, build_rca_prompt,
    flag_log_quality, load_sops, retrieve_sops, run_request_rca, summarize,
)
from .llm import DEFAULT_PROMPT_PRICE, DEFAULT_RESPONSE_PRICE, LlmClient, LlmUsage
from .logstore import LogStore, RawLogRecord
from .parsing import DrainParams, LogEvent, parse_all
from .promql import AlertDefinition
from .scoping import ToolCache, scope_logs

log = logging.getLogger(__name__)

STAGES = ("scoping", "parsing", "chaining", "clustering", "rca", "summary")
REPORT_JSON = "report.json"
REPORT_MD = "report.md"
METRICS_JSON = "metrics.json"
TOOL_CACHE_JSON = "tool_cache.json"


@dataclass
class PipelineConfig:
    threshold: float = DEFAULT_THRESHOLD
    linkage: str = "average"
    drain: DrainParams = field(default_factory=DrainParams)
    render_budget: int = DEFAULT_RENDER_BUDGET
    workers: int | None = None
    sop_k: int = DEFAULT_SOP_K
    aliases: dict[str, list[str]] | None = None
    component_info: dict[str, str] = field(default_factory=dict)
    quality: LogQualityConfig = field(default_factory=LogQualityConfig)
    prompt_price: float = DEFAULT_PROMPT_PRICE
    response_price: float = DEFAULT_RESPONSE_PRICE

    def pool_size(self) -> int:
        return self.workers or os.cpu_count() or 1


def reduction_ratio(requests: int, clusters: int) -> float:
    return 0.0 if requests <= 1 else 1.0 - clusters / requests


@dataclass
class PipelineMetrics:
    scoped_requests: int = 0
    clusters: int = 0
    llm_calls: int = 0
    scoping_llm_calls: int = 0
    rca_llm_calls: int = 0
    summary_llm_calls: int = 0
    cache_hit: bool = False
    scoped_records: int = 0
    request_records: int = 0
    log_events: int = 0
    stage_latency: dict[str, float] = field(default_factory=dict)
    usage: LlmUsage = field(default_factory=LlmUsage)
    prompt_price: float = DEFAULT_PROMPT_PRICE
    response_price: float = DEFAULT_RESPONSE_PRICE

    @property
    def reduction_ratio(self) -> float:
        return reduction_ratio(self.scoped_requests, self.clusters)

    @property
    def estimated_cost(self) -> float:
        return self.usage.cost(self.prompt_price, self.response_price)

    def to_json(self, include_latency: bool = True) -> dict:
        doc = {
            "scoped_requests": self.scoped_requests,
            "clusters": self.clusters,
            "reduction_ratio": round(self.reduction_ratio, 6),
            "llm_calls": self.llm_calls,
            "scoping_llm_calls": self.scoping_llm_calls,
            "rca_llm_calls": self.rca_llm_calls,
            "summary_llm_calls": self.summary_llm_calls,
            "cache_hit": self.cache_hit,
            "scoped_records": self.scoped_records,
            "request_records": self.request_records,
            "log_events": self.log_events,
            "usage": self.usage.to_json(),
            "estimated_cost_usd": round(self.estimated_cost, 6),
        }
        if include_latency:
            doc["stage_latency"] = {k: round(v, 6) for k, v in self.stage_latency.items()}
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "PipelineMetrics":
        m = cls(
            scoped_requests=int(doc["scoped_requests"]),
            clusters=int(doc["clusters"]),
            llm_calls=int(doc.get("llm_calls", 0)),
            scoping_llm_calls=int(doc.get("scoping_llm_calls", 0)),
            rca_llm_calls=int(doc.get("rca_llm_calls", 0)),
            summary_llm_calls=int(doc.get("summary_llm_calls", 0)),
            cache_hit=bool(doc.get("cache_hit", False)),
            scoped_records=int(doc.get("scoped_records", 0)),
            request_records=int(doc.get("request_records", 0)),
            log_events=int(doc.get("log_events", 0)),
            stage_latency={k: float(v) for k, v in (doc.get("stage_latency") or {}).items()},
            usage=LlmUsage(**(doc.get("usage") or {})),
        )
        return m


@dataclass
class DiagnosisResult:
    report: AlertDiagnosisReport
    metrics: PipelineMetrics
    clusters: ClusterSet
    chains: dict[str, LogChain]
    catalog: list[LogEvent]


@contextmanager
def _timed(metrics: PipelineMetrics, stage: str):
    start = time.perf_counter()
    try:
        yield
    except Exception as exc:
        if not hasattr(exc, "stage"):
            exc.stage = stage
        raise
    finally:
        metrics.stage_latency[stage] = metrics.stage_latency.get(stage, 0.0) + time.perf_counter() - start


def cluster_requests(by_request: dict[str, list[RawLogRecord]], event_of: dict[int, str],
                     threshold: float = DEFAULT_THRESHOLD, linkage: str = "average") -> ClusterSet:
    events = {rid: [event_of[r.seq] for r in recs] for rid, recs in by_request.items() if recs}
    vocab = build_vocabulary(events.values())
    embeddings = [embed_request(rid, ids, vocab) for rid, ids in events.items()]
    return hac_cluster(embeddings, threshold, linkage)


def diagnose(alert: AlertDefinition, store: LogStore, llm: LlmClient, cache: ToolCache,
             sops: list[SOPDocument] | None = None, config: PipelineConfig | None = None) -> DiagnosisResult:
    config = config or PipelineConfig()
    metrics = PipelineMetrics(prompt_price=config.prompt_price, response_price=config.response_price)
    calls_before = llm.usage().calls

    with _timed(metrics, "scoping"):
        scoped = scope_logs(alert, store, cache, llm, aliases=config.aliases)
        by_request = store.fetch_by_request_ids(scoped.request_ids)
    metrics.cache_hit = scoped.cache_hit
    metrics.scoping_llm_calls = scoped.llm_calls
    metrics.scoped_records = len(scoped.records)
    by_request = {rid: recs for rid, recs in by_request.items() if recs}
    metrics.scoped_requests = len(by_request)
    metrics.request_records = sum(len(v) for v in by_request.values())
    if not by_request:
        raise ValueError("scoped requests have no logs")

    with ThreadPoolExecutor(max_workers=config.pool_size()) as pool:
        with _timed(metrics, "parsing"):
            records = sorted((r for recs in by_request.values() for r in recs), key=lambda r: (r.ts, r.seq))
            catalog, assignments = parse_all(records, config.drain)
            event_of = {a.record_seq: a.event_id for a in assignments}
        metrics.log_events = len(catalog)
        events = {e.event_id: e for e in catalog}

        with _timed(metrics, "chaining"):
            chains = dict(pool.map(lambda rid: (rid, build_chain(rid, by_request[rid], event_of)), by_request))

        with _timed(metrics, "clustering"):
            clusters = cluster_requests(by_request, event_of, config.threshold, config.linkage)
        metrics.clusters = len(clusters.clusters)

        with _timed(metrics, "rca"):
            def analyse(cluster):
                rep = cluster.representative
                chain = chains[rep]
                text = render_chain(chain, events, first_messages(by_request[rep], event_of), config.render_budget)
                prompt = build_rca_prompt(alert, text, config.component_info)
                report = run_request_rca(llm, prompt, cluster.cluster_id, chain.components)
                report.representative = rep
                report.cluster_size = len(cluster.members)
                return report

            calls = llm.usage().calls
            cluster_reports = list(pool.map(analyse, clusters.clusters))
            metrics.rca_llm_calls = llm.usage().calls - calls

    with _timed(metrics, "summary"):
        flags = []
        for cluster in clusters.clusters:
            rep = cluster.representative
            flags.extend(flag_log_quality(chains[rep], by_request[rep], config.quality))
        relevant: list[SOPDocument] = []
        if sops:
            causes = [c for r in cluster_reports for c in r.root_causes]
            relevant = retrieve_sops(causes, SopIndex(sops), config.sop_k)
        calls = llm.usage().calls
        report = summarize(llm, alert, cluster_reports, relevant, flags)
        metrics.summary_llm_calls = llm.usage().calls - calls

    metrics.llm_calls = llm.usage().calls - calls_before
    metrics.usage = llm.usage()
    report.metrics = metrics.to_json(include_latency=False)
    return DiagnosisResult(report, metrics, clusters, chains, catalog)


def write_outputs(result: DiagnosisResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / REPORT_JSON).write_text(json.dumps(result.report.to_json(), indent=2, ensure_ascii=False) + "\n")
    (out / REPORT_MD).write_text(result.report.to_markdown())
    (out / METRICS_JSON).write_text(json.dumps(result.metrics.to_json(), indent=2) + "\n")


def run_diagnose(alert: AlertDefinition, log_file: str | Path, llm: LlmClient, out_dir: str | Path,
                 sop_dir: str | Path | None = None, config: PipelineConfig | None = None) -> DiagnosisResult:
    store = LogStore()
    store.ingest_jsonl(log_file)
    cache = ToolCache(Path(out_dir) / TOOL_CACHE_JSON)
    sops = load_sops(sop_dir) if sop_dir else None
    result = diagnose(alert, store, llm, cache, sops, config)
    write_outputs(result, out_dir)
    return result


def report_metrics(metrics: PipelineMetrics) -> str:
    rows = [
        ("requests scoped", f"{metrics.scoped_requests}"),
        ("clusters", f"{metrics.clusters}"),
        ("reduction ratio", f"{metrics.reduction_ratio * 100:.2f}%"),
        ("llm calls", f"{metrics.llm_calls}"),
        ("  scoping", f"{metrics.scoping_llm_calls} (cache hit: {'yes' if metrics.cache_hit else 'no'})"),
        ("  request rca", f"{metrics.rca_llm_calls}"),
        ("  summary", f"{metrics.summary_llm_calls}"),
        ("prompt tokens", f"{metrics.usage.prompt_tokens}"),
        ("response tokens", f"{metrics.usage.response_tokens}"),
        ("estimated cost", f"${metrics.estimated_cost:.4f}"),
    ]
    if metrics.stage_latency:
        rows.append(("stage latency (s)", ""))
        for stage in STAGES:
            if stage in metrics.stage_latency:
                rows.append((f"  {stage}", f"{metrics.stage_latency[stage]:.3f}"))
        rows.append(("  total", f"{sum(metrics.stage_latency.values()):.3f}"))
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v}".rstrip() for k, v in rows) + "\n"
