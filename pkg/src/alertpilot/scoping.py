"""Alert-log correlation: turn an alert's intent into a validated log query.

The "tool" is a declarative query plan (one DSL query plus the name of the
request-id field). It is never executed as code.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import (
    AlertPilotError, DslSyntaxError, InputError, LlmResponseUnparseable, ScopingFailed,
)
from .llm import LlmClient, LlmRequest, fenced_blocks
from .logstore import (
    LogQuery, LogStore, RawLogRecord, dsl_grammar_doc, extract_request_ids, format_ts,
    parse_query, values_equal,
)
from .promql import (
    AlertDefinition, AlertQueryIR, LabelMatcher, canonical_cache_key, parse_alert_expr,
)
from .regex import RegexError, full_match

log = logging.getLogger(__name__)

MAX_ITERATIONS = 3
MAX_SAMPLE = 20
MAX_OBSERVED = 5
NONEMPTY = LabelMatcher("__nonempty__", "eq", "")
ABSENT = "<absent>"

_ID_FIELD_RE = re.compile(r"^\s*request_id_field\s*:\s*([A-Za-z_][A-Za-z0-9_.\-]*)\s*$", re.M)


@dataclass(frozen=True)
class FilterTool:
    tool_id: str
    alert_key: str
    query: LogQuery
    request_id_field: str = "request_id"
    validated: bool = False
    created_at: int = 0
    iterations_used: int = 1

    def __post_init__(self):
        if not 1 <= self.iterations_used <= MAX_ITERATIONS:
            raise ValueError("iterations_used must be in [1, 3]")


@dataclass
class ScopingFeedback:
    execution_error: str | None = None
    sample_records: list[RawLogRecord] = field(default_factory=list)
    alignment_failures: list[tuple[LabelMatcher, list[str]]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.execution_error is None and not self.alignment_failures


@dataclass
class ScopedLogs:
    alert_key: str
    records: list[RawLogRecord]
    request_ids: list[str]
    tool_id: str
    cache_hit: bool
    tool: FilterTool | None = None
    llm_calls: int = 0


def _make_tool_id(alert_key: str, query: LogQuery, id_field: str) -> str:
    preds = json.dumps([[p.field, p.op, p.value] for p in query.predicates] + [id_field])
    return "tool-" + hashlib.sha1(f"{alert_key}\n{preds}".encode()).hexdigest()[:12]


def alert_window(alert: AlertDefinition) -> tuple[int, int]:
    """Half-open store window covering [fired_at - window - for, fired_at]."""
    start, end = alert.query_window()
    return start, end + 1


# --------------------------------------------------------------------------
# tool cache


class ToolCache:
    """Validated tools keyed by canonical alert key, optionally persisted as JSON."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._entries: dict[str, dict] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            try:
                doc = json.loads(self.path.read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise InputError(f"unreadable tool cache {self.path}: {exc}") from None
            if not isinstance(doc, dict):
                raise InputError(f"tool cache {self.path} must hold a JSON object")
            self._entries = doc

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def get(self, key: str) -> FilterTool | None:
        with self._lock:
            entry = self._entries.get(key)
        if entry is None:
            return None
        try:
            query = parse_query(entry["query"])
            id_field = entry.get("request_id_field", "request_id")
            return FilterTool(
                tool_id=entry.get("tool_id") or _make_tool_id(key, query, id_field),
                alert_key=key,
                query=query,
                request_id_field=id_field,
                validated=True,
                created_at=int(entry.get("created_at", 0)),
                iterations_used=int(entry.get("iterations_used", 1)),
            )
        except (KeyError, ValueError, DslSyntaxError) as exc:
            log.warning("ignoring corrupt cache entry for %s: %s", key, exc)
            return None

    def put(self, tool: FilterTool) -> None:
        entry = {
            "query": tool.query.to_dsl(),
            "request_id_field": tool.request_id_field,
            "created_at": tool.created_at,
            "iterations_used": tool.iterations_used,
            "tool_id": tool.tool_id,
        }
        with self._lock:
            self._entries[tool.alert_key] = entry
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                tmp = self.path.with_suffix(self.path.suffix + ".tmp")
                tmp.write_text(json.dumps(self._entries, indent=2, sort_keys=True) + "\n")
                tmp.replace(self.path)


# --------------------------------------------------------------------------
# prompts


SCOPING_SYSTEM = "You are an SRE assistant that writes precise log queries."


def _describe_ir(ir: AlertQueryIR) -> str:
    lines = [f"metric: {ir.metric}"]
    if ir.matchers:
        lines.append("label matchers: " + ", ".join(str(m) for m in ir.matchers))
    if ir.range_fn != "none":
        lines.append(f"range function: {ir.range_fn} over {ir.range_window}s")
    if ir.agg != "none":
        by = f" by ({', '.join(ir.agg_by)})" if ir.agg_by else ""
        lines.append(f"aggregation: {ir.agg}{by}")
    if ir.cmp is not None:
        lines.append(f"fires when value {ir.cmp} {ir.threshold!r}")
    return "\n".join(lines)


def _records_jsonl(records: list[RawLogRecord]) -> str:
    return "\n".join(json.dumps(r.to_json(), sort_keys=True) for r in records) or "(none)"


def _output_instructions() -> str:
    return (
        "## Output\n"
        "Reply with exactly one query inside a ```dsl fenced block. The FROM/TO window is\n"
        "fixed to the alert window, so you may omit it. If the request identifier is not\n"
        "stored in `request_id`, add the line `request_id_field: <field name>`.\n"
    )


def build_generation_prompt(alert: AlertDefinition, ir: AlertQueryIR,
                            log_examples: list[RawLogRecord], dsl_doc: str) -> str:
    start, end = alert.query_window()
    return (
        "# Task: alert-log correlation (query generation)\n"
        "Write one log query that retrieves the log records of the requests that\n"
        "caused this alert, matching the alert's label criteria even when log field\n"
        "names differ from the metric labels.\n\n"
        "## Alert definition\n"
        f"{json.dumps(alert.to_dict(), indent=2, sort_keys=True)}\n\n"
        "## Parsed alert intent\n"
        f"{_describe_ir(ir)}\n"
        f"window: FROM {format_ts(start)} TO {format_ts(end)}\n\n"
        "## Log examples (JSONL)\n"
        f"{_records_jsonl(log_examples[:MAX_SAMPLE])}\n\n"
        "## Query language\n"
        f"{dsl_doc}\n"
        f"{_output_instructions()}"
    )


def build_refinement_prompt(alert: AlertDefinition, tool: FilterTool,
                            feedback: ScopingFeedback, dsl_doc: str) -> str:
    lines = []
    if feedback.execution_error:
        lines.append(f"execution error: {feedback.execution_error}")
    for matcher, observed in feedback.alignment_failures:
        if matcher == NONEMPTY:
            lines.append("alignment failure: the query returned no records")
        else:
            lines.append(f"alignment failure: records must satisfy {matcher}; observed {json.dumps(observed)}")
    return (
        "# Task: alert-log correlation (query refinement)\n"
        "The previous query did not retrieve logs that conform to the alert logic.\n"
        "Fix it using the feedback below.\n\n"
        "## Alert definition\n"
        f"{json.dumps(alert.to_dict(), indent=2, sort_keys=True)}\n\n"
        "## Previous query\n"
        f"```dsl\n{tool.query.to_dsl()}\n```\n"
        f"request_id_field: {tool.request_id_field}\n\n"
        "## Feedback\n"
        + "\n".join(lines) + "\n\n"
        "## Sample of returned records (JSONL)\n"
        f"{_records_jsonl(feedback.sample_records[:MAX_SAMPLE])}\n\n"
        "## Query language\n"
        f"{dsl_doc}\n"
        f"{_output_instructions()}"
    )


def parse_tool_response(text: str, window: tuple[int, int]) -> tuple[LogQuery, str]:
    """Pull the query and request-id field out of an agent reply."""
    id_field = "request_id"
    m = _ID_FIELD_RE.search(text)
    if m:
        id_field = m.group(1)
    errors = []
    for lang, body in fenced_blocks(text):
        if lang not in ("", "dsl", "sql", "query"):
            continue
        body = _ID_FIELD_RE.sub("", body).strip()
        if not body:
            continue
        try:
            query = parse_query(" ".join(body.split()), window=window)
        except (DslSyntaxError, ValueError) as exc:
            errors.append(str(exc))
            continue
        return query.with_window(*window), id_field
    detail = f": {errors[0]}" if errors else ""
    raise LlmResponseUnparseable(f"no parseable DSL block in agent response{detail}")


# --------------------------------------------------------------------------
# operations


def generate_filter_tool(alert: AlertDefinition, ir: AlertQueryIR, log_examples: list[RawLogRecord],
                         dsl_doc: str, llm: LlmClient, alert_key: str | None = None) -> FilterTool:
    key = alert_key or canonical_cache_key(alert.expr)
    prompt = build_generation_prompt(alert, ir, log_examples, dsl_doc)
    reply = llm.complete(LlmRequest(role="reasoning", system=SCOPING_SYSTEM, user=prompt))
    query, id_field = parse_tool_response(reply, alert_window(alert))
    return FilterTool(
        tool_id=_make_tool_id(key, query, id_field),
        alert_key=key,
        query=query,
        request_id_field=id_field,
        created_at=int(time.time() * 1000),
        iterations_used=1,
    )


def refine_filter_tool(alert: AlertDefinition, tool: FilterTool, feedback: ScopingFeedback,
                       llm: LlmClient, dsl_doc: str | None = None) -> FilterTool:
    if tool.iterations_used >= MAX_ITERATIONS:
        raise ValueError("refinement budget already spent")
    if feedback.ok:
        raise ValueError("refinement needs non-empty feedback")
    prompt = build_refinement_prompt(alert, tool, feedback, dsl_doc or dsl_grammar_doc())
    reply = llm.complete(LlmRequest(role="reasoning", system=SCOPING_SYSTEM, user=prompt))
    query, id_field = parse_tool_response(reply, alert_window(alert))
    if query == tool.query and id_field == tool.request_id_field:
        raise LlmResponseUnparseable("refinement returned the unchanged query")
    return FilterTool(
        tool_id=_make_tool_id(tool.alert_key, query, id_field),
        alert_key=tool.alert_key,
        query=query,
        request_id_field=id_field,
        created_at=int(time.time() * 1000),
        iterations_used=tool.iterations_used + 1,
    )


def _alias_lookup(aliases: dict[str, list[str]] | None) -> dict[str, list[str]]:
    table: dict[str, list[str]] = {}
    for key, names in (aliases or {}).items():
        group = [key, *names]
        for name in group:
            bucket = table.setdefault(name, [name])
            for other in group:
                if other not in bucket:
                    bucket.append(other)
    return table


def _satisfies(matcher: LabelMatcher, value: str) -> bool:
    if matcher.op == "eq":
        return values_equal(value, matcher.value)
    try:
        return full_match(matcher.value, value)
    except RegexError:
        return False


def check_alignment(ir: AlertQueryIR, records: list[RawLogRecord],
                    aliases: dict[str, list[str]] | None = None) -> list[tuple[LabelMatcher, list[str]]]:
    """Deterministic check that every record honours the alert's eq/regex label matchers.

    A matcher is enforced only when its key, or an alias of it, appears in the
    fields of at least one record. Records lacking every candidate field count
    as violations (observed as ``<absent>``).
    """
    if not records:
        return [(NONEMPTY, [])]
    table = _alias_lookup(aliases)
    failures = []
    for matcher in ir.matchers:
        if matcher.op not in ("eq", "regex"):
            continue
        names = table.get(matcher.key, [matcher.key])
        if not any(name in rec.fields for rec in records for name in names):
            continue
        observed: list[str] = []
        for rec in records:
            values = [rec.fields[n] for n in names if n in rec.fields]
            if any(_satisfies(matcher, v) for v in values):
                continue
            shown = values[0] if values else ABSENT
            if shown not in observed and len(observed) < MAX_OBSERVED:
                observed.append(shown)
        if observed:
            failures.append((matcher, observed))
    return failures


def _evaluate(store: LogStore, tool: FilterTool, ir: AlertQueryIR,
              aliases) -> tuple[list[RawLogRecord], ScopingFeedback]:
    try:
        records = store.execute_query(tool.query)
    except AlertPilotError as exc:
        return [], ScopingFeedback(execution_error=str(exc))
    failures = check_alignment(ir, records, aliases)
    return records, ScopingFeedback(sample_records=records[:MAX_SAMPLE], alignment_failures=failures)


def scope_logs(alert: AlertDefinition, store: LogStore, cache: ToolCache, llm: LlmClient,
               aliases: dict[str, list[str]] | None = None, dsl_doc: str | None = None) -> ScopedLogs:
    ir = parse_alert_expr(alert.expr)
    key = canonical_cache_key(alert.expr)
    window = alert_window(alert)
    dsl_doc = dsl_doc or dsl_grammar_doc()

    cached = cache.get(key)
    if cached is not None:
        tool = replace(cached, query=cached.query.with_window(*window))
        records, feedback = _evaluate(store, tool, ir, aliases)
        if feedback.ok:
            return ScopedLogs(key, records, extract_request_ids(records, tool.request_id_field),
                              tool.tool_id, cache_hit=True, tool=tool, llm_calls=0)
        log.warning("cached tool %s failed validation for %s; regenerating", tool.tool_id, alert.name)

    examples = store.sample(MAX_SAMPLE, *window)
    tool: FilterTool | None = None
    feedback = ScopingFeedback()
    calls = 0
    while calls < MAX_ITERATIONS:
        calls += 1
        try:
            if tool is None:
                candidate = generate_filter_tool(alert, ir, examples, dsl_doc, llm, alert_key=key)
                candidate = replace(candidate, iterations_used=calls)
            else:
                candidate = refine_filter_tool(alert, replace(tool, iterations_used=calls - 1),
                                               feedback, llm, dsl_doc)
        except LlmResponseUnparseable as exc:
            feedback = ScopingFeedback(execution_error=f"unusable response: {exc}")
            continue
        tool = candidate
        records, feedback = _evaluate(store, tool, ir, aliases)
        if feedback.ok:
            tool = replace(tool, validated=True)
            cache.put(tool)
            return ScopedLogs(key, records, extract_request_ids(records, tool.request_id_field),
                              tool.tool_id, cache_hit=False, tool=tool, llm_calls=calls)
    raise ScopingFailed(
        f"no aligned log query for alert {alert.name!r} after {calls} attempts",
        tool=tool, feedback=feedback, llm_calls=calls,
    )
