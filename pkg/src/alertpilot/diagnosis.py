"""Per-cluster RCA agent, SOP retrieval, log-quality flags and report synthesis."""

from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .chains import LogChain
from .errors import EmptyIndex, InputError, LlmResponseUnparseable
from .llm import LlmClient, LlmRequest, extract_json_block
from .logstore import RawLogRecord, format_ts
from .promql import AlertDefinition
from .regex import full_match

log = logging.getLogger(__name__)

RCA_TEMPLATE_VERSION = "rca-v1"
SUMMARY_TEMPLATE_VERSION = "summary-v1"
DEFAULT_SOP_K = 3
NO_COMPONENT_DOCS = "(no component docs provided)"
REMINDER = (
    "\n\nREMINDER: your previous answer could not be parsed. Respond ONLY with one "
    "```json fenced block that follows the output schema above."
)

RCA_SCHEMA = """```json
{
  "root_causes": ["<concise root cause>", "..."],
  "faulty_components": ["<component name from the chain>"],
  "key_log_evidence": [{"event_id": "<event id from the chain>", "excerpt": "<log line>"}],
  "inference_details": "<step-by-step reasoning over the chain>",
  "insufficient_logs": false,
  "logging_quality_notes": ["<missing or inconsistent logging you noticed>"]
}
```"""

SUMMARY_SCHEMA = """```json
{
  "summary": "<one-paragraph diagnosis of the alert>",
  "root_causes": ["<unified, de-duplicated root cause>", "..."],
  "suggestions": ["<actionable remediation step>", "..."]
}
```"""


@dataclass
class RequestRCAReport:
    cluster_id: str
    root_causes: list[str]
    faulty_components: list[str]
    key_log_evidence: list[tuple[str, str]]
    inference_details: str = ""
    insufficient_logs: bool = False
    logging_quality_notes: list[str] = field(default_factory=list)
    representative: str | None = None
    cluster_size: int = 0

    def to_json(self) -> dict:
        return {
            "cluster_id": self.cluster_id,
            "representative": self.representative,
            "cluster_size": self.cluster_size,
            "root_causes": list(self.root_causes),
            "faulty_components": list(self.faulty_components),
            "key_log_evidence": [{"event_id": e, "excerpt": x} for e, x in self.key_log_evidence],
            "inference_details": self.inference_details,
            "insufficient_logs": self.insufficient_logs,
            "logging_quality_notes": list(self.logging_quality_notes),
        }


@dataclass(frozen=True)
class SOPDocument:
    doc_id: str
    title: str
    body: str
    tags: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.body.strip():
            raise ValueError(f"SOP {self.doc_id!r} has an empty body")


@dataclass(frozen=True)
class LogQualityFlag:
    kind: str  # silent_failure | level_inconsistency | missing_propagation
    request_id: str
    component: str
    detail: str

    def describe(self) -> str:
        return f"[{self.kind}] request {self.request_id} @ {self.component}: {self.detail}"


@dataclass
class AlertDiagnosisReport:
    alert_name: str
    summary: str
    root_causes: list[str]
    faulty_components: list[str]
    key_logs: list[tuple[str, str]]
    suggestions: list[str]
    logging_quality_feedback: list[str]
    cluster_reports: list[RequestRCAReport]
    metrics: dict
    sops: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "alert_name": self.alert_name,
            "summary": self.summary,
            "root_causes": list(self.root_causes),
            "faulty_components": list(self.faulty_components),
            "key_logs": [{"event_id": e, "excerpt": x} for e, x in self.key_logs],
            "suggestions": list(self.suggestions),
            "logging_quality_feedback": list(self.logging_quality_feedback),
            "sops": list(self.sops),
            "cluster_reports": [r.to_json() for r in self.cluster_reports],
            "metrics": self.metrics,
        }

    def to_markdown(self) -> str:
        out = [f"# Alert diagnosis: {self.alert_name}", "", "## Summary", "", self.summary or "(none)", ""]

        def bullets(title, items):
            out.extend([f"## {title}", ""])
            out.extend(f"- {x}" for x in (items or ["(none)"]))
            out.append("")

        bullets("Root causes", self.root_causes)
        bullets("Faulty components", self.faulty_components)
        bullets("Key logs", [f"`{e}` {x}" for e, x in self.key_logs])
        bullets("Suggestions", self.suggestions)
        bullets("Relevant SOPs", self.sops)
        bullets("Logging quality feedback", self.logging_quality_feedback)
        out.extend(["## Clusters", ""])
        for r in self.cluster_reports:
            out.append(f"### {r.cluster_id} ({r.cluster_size} requests, representative {r.representative})")
            out.append("")
            if r.insufficient_logs:
                out.append("_Logs were insufficient to determine a root cause._")
                out.append("")
            out.extend(f"- root cause: {c}" for c in r.root_causes)
            out.extend(f"- faulty component: {c}" for c in r.faulty_components)
            if r.inference_details:
                out.extend(["", r.inference_details])
            out.append("")
        m = self.metrics
        if m:
            out.extend(["## Metrics", ""])
            out.extend(f"- {k}: {v}" for k, v in m.items() if not isinstance(v, dict))
            out.append("")
        return "\n".join(out).rstrip() + "\n"


# --------------------------------------------------------------------------
# request RCA agent


def build_rca_prompt(alert: AlertDefinition, chain_text: str, component_info: Mapping[str, str]) -> str:
    if not chain_text.strip():
        raise ValueError("chain_text must be non-empty")
    if component_info:
        comps = "\n".join(f"- {name}: {component_info[name]}" for name in sorted(component_info))
    else:
        comps = NO_COMPONENT_DOCS
    annotations = "\n".join(f"  {k}: {v}" for k, v in sorted(alert.annotations.items())) or "  (none)"
    return (
        f"# Log-based request root cause analysis ({RCA_TEMPLATE_VERSION})\n"
        "You are an experienced on-call engineer. The request below is the representative\n"
        "of a group of requests that share one execution pattern and are linked to the\n"
        "alert. Follow its log chain across components and identify why it failed.\n\n"
        "## Alert\n"
        f"name: {alert.name}\n"
        f"severity: {alert.severity}\n"
        f"expr: {alert.expr}\n"
        f"fired_at: {format_ts(alert.fired_at)}\n"
        f"annotations:\n{annotations}\n\n"
        "## Service components\n"
        f"{comps}\n\n"
        "## Request log chain\n"
        "Segments are ordered by their earliest event; each line is the first\n"
        "occurrence of one log event.\n"
        f"{chain_text.rstrip()}\n\n"
        "## Instructions\n"
        "1. Name the root causes and the faulty components (only components that appear in the chain).\n"
        "2. Quote the key log evidence by event id.\n"
        "3. Explain your inference step by step.\n"
        "4. If the logs are insufficient or inconsistent to determine the root cause (for example the\n"
        "   error was not propagated or not logged), set \"insufficient_logs\": true and describe the\n"
        "   logging problem in \"logging_quality_notes\".\n\n"
        "## Output schema\n"
        f"Respond with exactly one fenced block:\n{RCA_SCHEMA}\n"
    )


def _str_list(value, name: str) -> list[str]:
    if not isinstance(value, list) or not all(isinstance(x, str) for x in value):
        raise ValueError(f"{name} must be a list of strings")
    return value


def parse_rca_response(text: str, cluster_id: str) -> RequestRCAReport:
    doc = extract_json_block(text)
    if doc is None:
        raise ValueError("no JSON block")
    root_causes = _str_list(doc.get("root_causes", []), "root_causes")
    faulty = _str_list(doc.get("faulty_components", []), "faulty_components")
    evidence = []
    for item in doc.get("key_log_evidence", []) or []:
        if isinstance(item, dict) and "event_id" in item:
            evidence.append((str(item["event_id"]), str(item.get("excerpt", ""))))
        else:
            raise ValueError("key_log_evidence items need event_id")
    insufficient = doc.get("insufficient_logs", False)
    if not isinstance(insufficient, bool):
        raise ValueError("insufficient_logs must be boolean")
    if not insufficient and not root_causes:
        raise ValueError("root_causes empty without insufficient_logs")
    details = doc.get("inference_details", "")
    return RequestRCAReport(
        cluster_id=cluster_id,
        root_causes=root_causes,
        faulty_components=faulty,
        key_log_evidence=evidence,
        inference_details=details if isinstance(details, str) else json.dumps(details),
        insufficient_logs=insufficient,
        logging_quality_notes=_str_list(doc.get("logging_quality_notes", []) or [], "logging_quality_notes"),
    )


def _ask(llm: LlmClient, role: str, prompt: str, parse):
    reply = llm.complete(LlmRequest(role=role, user=prompt))
    try:
        return parse(reply)
    except ValueError as first:
        log.info("unparseable %s response (%s); asking again", role, first)
    reply = llm.complete(LlmRequest(role=role, user=prompt + REMINDER))
    try:
        return parse(reply)
    except ValueError as second:
        raise LlmResponseUnparseable(f"{role} agent response unusable after one retry: {second}") from None


def run_request_rca(llm: LlmClient, prompt: str, cluster_id: str,
                    chain_components: Iterable[str] | None = None) -> RequestRCAReport:
    report = _ask(llm, "reasoning", prompt, lambda text: parse_rca_response(text, cluster_id))
    if chain_components is not None:
        allowed = set(chain_components)
        kept = [c for c in report.faulty_components if c in allowed]
        dropped = [c for c in report.faulty_components if c not in allowed]
        if dropped:
            log.warning("cluster %s: dropping components absent from the chain: %s", cluster_id, dropped)
        report.faulty_components = kept
    return report


# --------------------------------------------------------------------------
# SOP retrieval (tf-idf)

_TOKEN = re.compile(r"[^\W_]+")


def tokenize_text(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def load_sops(directory: str | Path) -> list[SOPDocument]:
    root = Path(directory)
    if not root.is_dir():
        raise InputError(f"SOP directory {root} does not exist")
    docs = []
    for path in sorted(p for p in root.iterdir() if p.is_file() and not p.name.startswith(".")):
        text = path.read_text(encoding="utf-8")
        lines = text.splitlines()
        tags: tuple[str, ...] = ()
        if lines and lines[0].lower().startswith("tags:"):
            tags = tuple(t.strip() for t in lines[0].split(":", 1)[1].split(",") if t.strip())
            lines = lines[1:]
        body = "\n".join(lines).strip()
        if not body:
            log.warning("skipping empty SOP %s", path)
            continue
        title = next((ln.strip().lstrip("#").strip() for ln in lines if ln.strip()), path.stem)
        docs.append(SOPDocument(path.stem, title, body, tags))
    return docs


class SopIndex:
    """TF-IDF vectors: raw term counts, smoothed idf ``ln((1+N)/(1+df)) + 1``, L2-normalised."""

    def __init__(self, docs: Iterable[SOPDocument]):
        self.docs = sorted(docs, key=lambda d: d.doc_id)
        n = len(self.docs)
        counts = [Counter(tokenize_text(" ".join((d.title, " ".join(d.tags), d.body)))) for d in self.docs]
        df: Counter = Counter()
        for c in counts:
            df.update(c.keys())
        self.idf = {t: math.log((1 + n) / (1 + k)) + 1.0 for t, k in df.items()}
        self.vectors = [self._weigh(c) for c in counts]

    def __len__(self) -> int:
        return len(self.docs)

    def _weigh(self, tf: Counter) -> dict[str, float]:
        vec = {t: k * self.idf[t] for t, k in tf.items() if t in self.idf}
        norm = math.sqrt(sum(v * v for v in vec.values()))
        return {t: v / norm for t, v in vec.items()} if norm else {}

    def scores(self, query: str) -> list[float]:
        q = self._weigh(Counter(tokenize_text(query)))
        return [sum(w * vec.get(t, 0.0) for t, w in q.items()) for vec in self.vectors]


def retrieve_sops(root_causes: list[str], index: SopIndex, k: int = DEFAULT_SOP_K) -> list[SOPDocument]:
    if len(index) == 0:
        raise EmptyIndex("SOP index is empty")
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = index.scores(" ".join(root_causes))
    ranked = sorted(range(len(index)), key=lambda i: (-scores[i], index.docs[i].doc_id))
    return [index.docs[i] for i in ranked[:k]]


# --------------------------------------------------------------------------
# log-quality flags


@dataclass(frozen=True)
class LogQualityConfig:
    code_field: str = "code"
    error_pattern: str = "[45].."
    success_pattern: str = "2.."


def _code(rec: RawLogRecord, cfg: LogQualityConfig) -> str | None:
    return rec.fields.get(cfg.code_field)


def flag_log_quality(chain: LogChain, records: list[RawLogRecord],
                     config: LogQualityConfig = LogQualityConfig()) -> list[LogQualityFlag]:
    rid = chain.request_id
    ordered = sorted(records, key=lambda r: (r.ts, r.seq))
    flags: list[LogQualityFlag] = []
    loud = {"warn", "error"}

    def is_error(code):
        return code is not None and full_match(config.error_pattern, code)

    def is_success(code):
        return code is not None and full_match(config.success_pattern, code)

    # silent failure: an error code surfaces but nothing is logged above info
    if not any(r.level in loud for r in ordered):
        failing = next((r for r in ordered if is_error(_code(r, config))), None)
        if failing is not None:
            flags.append(LogQualityFlag(
                "silent_failure", rid, failing.component,
                f"{config.code_field}={_code(failing, config)} returned while all {len(ordered)} "
                "log records of the request are at info/debug level",
            ))

    # warn/error logged alongside a success code
    seen = set()
    for r in ordered:
        code = _code(r, config)
        if r.level in loud and is_success(code) and (r.component, code, r.level) not in seen:
            seen.add((r.component, code, r.level))
            flags.append(LogQualityFlag(
                "level_inconsistency", rid, r.component,
                f"logged at {r.level} level despite success {config.code_field}={code}: {r.message}",
            ))

    # error in one component, silence in the component that logs next, error code at the end
    codes = [c for c in (_code(r, config) for r in ordered) if c is not None]
    if codes and is_error(codes[-1]):
        by_comp: dict[str, list[RawLogRecord]] = {}
        for r in ordered:
            by_comp.setdefault(r.component, []).append(r)
        for here in chain.components:
            first_err = next((k for k, r in enumerate(ordered) if r.component == here and r.level == "error"), None)
            if first_err is None:
                continue
            nxt = next((r.component for r in ordered[first_err + 1:] if r.component != here), None)
            if nxt is not None and not any(r.level in loud for r in by_comp[nxt]):
                flags.append(LogQualityFlag(
                    "missing_propagation", rid, nxt,
                    f"{here} logged an error but {nxt} recorded no warn/error before the request "
                    f"ended with {config.code_field}={codes[-1]}",
                ))
    return flags


# --------------------------------------------------------------------------
# summary agent


def _dedup(items: Iterable) -> list:
    return list(dict.fromkeys(items))


def build_summary_prompt(alert: AlertDefinition, cluster_reports: list[RequestRCAReport],
                         sops: list[SOPDocument], flags: list[LogQualityFlag]) -> str:
    reports = json.dumps([r.to_json() for r in cluster_reports], indent=2)
    sop_text = "\n\n".join(f"### {d.doc_id}: {d.title}\n{d.body[:2000]}" for d in sops) or "(none)"
    flag_text = "\n".join(f"- {f.describe()}" for f in flags) or "(none)"
    return (
        f"# Diagnostic result summary ({SUMMARY_TEMPLATE_VERSION})\n"
        "Aggregate the per-cluster analyses of one alert into a single diagnosis.\n"
        "Clusters may share a root cause while showing different symptoms; merge them.\n\n"
        "## Alert\n"
        f"name: {alert.name}\nseverity: {alert.severity}\nexpr: {alert.expr}\n"
        f"fired_at: {format_ts(alert.fired_at)}\n\n"
        f"## Cluster analyses\n{reports}\n\n"
        f"## Relevant SOPs\n{sop_text}\n\n"
        f"## Logging quality findings\n{flag_text}\n\n"
        "## Output schema\n"
        f"Respond with exactly one fenced block:\n{SUMMARY_SCHEMA}\n"
    )


def _parse_summary(text: str) -> dict:
    doc = extract_json_block(text)
    if doc is None:
        raise ValueError("no JSON block")
    summary = doc.get("summary")
    if not isinstance(summary, str):
        raise ValueError("summary must be a string")
    return {
        "summary": summary,
        "root_causes": _str_list(doc.get("root_causes", []), "root_causes"),
        "suggestions": _str_list(doc.get("suggestions", []), "suggestions"),
    }


def summarize(llm: LlmClient, alert: AlertDefinition, cluster_reports: list[RequestRCAReport],
              sops: list[SOPDocument], flags: list[LogQualityFlag], metrics: dict | None = None
              ) -> AlertDiagnosisReport:
    """Fast-role summary; list fields other than summary/suggestions are computed locally."""
    if not cluster_reports:
        raise ValueError("at least one cluster report is required")
    parsed = _ask(llm, "fast", build_summary_prompt(alert, cluster_reports, sops, flags), _parse_summary)
    local_causes = [c for r in cluster_reports for c in r.root_causes]
    feedback = [f.describe() for f in flags]
    feedback += [f"[agent:{r.cluster_id}] {n}" for r in cluster_reports for n in r.logging_quality_notes]
    key_logs: dict[str, str] = {}
    for r in cluster_reports:
        for eid, excerpt in r.key_log_evidence:
            key_logs.setdefault(eid, excerpt)
    return AlertDiagnosisReport(
        alert_name=alert.name,
        summary=parsed["summary"],
        root_causes=_dedup(parsed["root_causes"] or local_causes),
        faulty_components=_dedup(c for r in cluster_reports for c in r.faulty_components),
        key_logs=list(key_logs.items()),
        suggestions=_dedup(parsed["suggestions"]),
        logging_quality_feedback=_dedup(feedback),
        cluster_reports=list(cluster_reports),
        metrics=dict(metrics or {}),
        sops=[d.doc_id for d in sops],
    )
