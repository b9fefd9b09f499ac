"""Append-only structured log store with a small query DSL.

Textual query form::

    FROM 2025-07-01T10:00:00.000Z TO 2025-07-01T10:05:00.000Z
    WHERE component = "api-gw" AND code =~ "5.." [AND ...] [LIMIT 100]

Operators: ``=``, ``!=``, ``=~`` (RE2, full match), ``CONTAINS``, ``IN ("a", "b")``.
The time window is half-open: ``FROM <= ts < TO``.
"""

from __future__ import annotations

import bisect
import json
import logging
import re
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DslSyntaxError, InputError, SchemaError, UnknownField
from .regex import RegexError, full_match

log = logging.getLogger(__name__)

LEVELS = ("debug", "info", "warn", "error")
BUILTIN_FIELDS = ("ts", "component", "level", "logging_path", "request_id", "message")
_NUMERIC = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
PREDICATE_OPS = ("eq", "neq", "regex", "contains", "in")
_OP_SYMBOLS = {"eq": "=", "neq": "!=", "regex": "=~", "contains": "CONTAINS", "in": "IN"}


@dataclass(frozen=True)
class RawLogRecord:
    ts: int
    component: str
    level: str
    message: str
    logging_path: str | None = None
    request_id: str | None = None
    fields: dict[str, str] = field(default_factory=dict)
    seq: int = -1

    def get(self, name: str) -> str | None:
        """Field lookup across built-in attributes and structured fields."""
        if name in BUILTIN_FIELDS:
            value = getattr(self, name)
            return None if value is None else str(value)
        return self.fields.get(name)

    def to_json(self) -> dict:
        return {
            "ts": self.ts,
            "component": self.component,
            "level": self.level,
            "logging_path": self.logging_path,
            "request_id": self.request_id,
            "fields": dict(self.fields),
            "message": self.message,
        }

    @classmethod
    def from_json(cls, doc: dict, seq: int = -1) -> "RawLogRecord":
        if not isinstance(doc, dict):
            raise SchemaError("record must be a JSON object")
        ts = doc.get("ts")
        if isinstance(ts, bool) or not isinstance(ts, int) or ts <= 0:
            raise SchemaError("ts must be a positive integer (epoch millis)")
        component = doc.get("component")
        if not isinstance(component, str) or not component:
            raise SchemaError("component must be a non-empty string")
        level = doc.get("level")
        if level not in LEVELS:
            raise SchemaError(f"level must be one of {LEVELS}")
        message = doc.get("message")
        if not isinstance(message, str):
            raise SchemaError("message must be a string")
        path = doc.get("logging_path")
        rid = doc.get("request_id")
        for name, value in (("logging_path", path), ("request_id", rid)):
            if value is not None and not isinstance(value, str):
                raise SchemaError(f"{name} must be a string or null")
        raw_fields = doc.get("fields") or {}
        if not isinstance(raw_fields, dict):
            raise SchemaError("fields must be an object")
        fields = {}
        for k, v in raw_fields.items():
            if isinstance(v, (dict, list)):
                raise SchemaError(f"field {k!r} must be a scalar")
            fields[str(k)] = v if isinstance(v, str) else json.dumps(v)
        return cls(ts, component, level, message, path, rid, fields, seq)


@dataclass(frozen=True)
class FieldPredicate:
    field: str
    op: str
    value: str | tuple[str, ...]

    def __post_init__(self):
        if self.op not in PREDICATE_OPS:
            raise ValueError(f"unknown predicate op {self.op!r}")
        if self.op == "in":
            if isinstance(self.value, str) or not self.value:
                raise ValueError("'in' needs a non-empty list of values")
            object.__setattr__(self, "value", tuple(str(v) for v in self.value))
        elif not isinstance(self.value, str):
            raise ValueError(f"{self.op!r} takes a single string value")

    def matches(self, actual: str | None) -> bool:
        if actual is None:
            return self.op == "neq"
        if self.op == "eq":
            return values_equal(actual, self.value)
        if self.op == "neq":
            return not values_equal(actual, self.value)
        if self.op == "regex":
            return full_match(self.value, actual)
        if self.op == "contains":
            return self.value in actual
        return any(values_equal(actual, v) for v in self.value)


@dataclass(frozen=True)
class LogQuery:
    time_from: int
    time_to: int
    predicates: tuple[FieldPredicate, ...] = ()
    limit: int | None = None

    def __post_init__(self):
        if self.time_from > self.time_to:
            raise ValueError("time_from must be <= time_to")
        if self.limit is not None and self.limit <= 0:
            raise ValueError("limit must be positive")
        object.__setattr__(self, "predicates", tuple(self.predicates))

    def with_window(self, time_from: int, time_to: int) -> "LogQuery":
        return LogQuery(time_from, time_to, self.predicates, self.limit)

    def to_dsl(self) -> str:
        return format_query(self)


def values_equal(a: str, b: str) -> bool:
    """String equality, except that two numeric strings compare as numbers."""
    if a == b:
        return True
    if _NUMERIC.fullmatch(a) and _NUMERIC.fullmatch(b):
        return float(a) == float(b)
    return False


def extract_request_ids(records: Iterable[RawLogRecord], id_field: str = "request_id") -> list[str]:
    seen: dict[str, None] = {}
    for rec in records:
        rid = rec.get(id_field)
        if rid is not None and rid not in seen:
            seen[rid] = None
    return list(seen)


class LogStore:
    """In-memory store fed from JSONL files.

    Single writer, many readers: ingestion takes the write lock; queries read
    immutable snapshots of the sorted index.
    """

    def __init__(self):
        self._records: list[RawLogRecord] = []
        self._order: list[tuple[int, int]] = []  # sorted (ts, seq)
        self._by_request: dict[str, list[int]] = defaultdict(list)
        self._field_keys: set[str] = set()
        self._lock = threading.Lock()
        self.rejected: list[tuple[int, str]] = []

    def __len__(self) -> int:
        return len(self._records)

    @property
    def records(self) -> Sequence[RawLogRecord]:
        return tuple(self._records)

    @property
    def field_keys(self) -> frozenset[str]:
        return frozenset(self._field_keys)

    def ingest_jsonl(self, path: str | Path) -> int:
        try:
            with open(path, encoding="utf-8") as fh:
                lines = fh.read().splitlines()
        except OSError as exc:
            raise InputError(f"cannot read log file {path}: {exc}") from None
        docs, rejected = [], []
        for lineno, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                docs.append(RawLogRecord.from_json(json.loads(line)))
            except (json.JSONDecodeError, SchemaError) as exc:
                rejected.append((lineno, str(exc)))
        if rejected:
            for lineno, reason in rejected[:10]:
                log.warning("%s:%d rejected: %s", path, lineno, reason)
            if len(rejected) > 10:
                log.warning("%s: %d more malformed lines", path, len(rejected) - 10)
        if not docs and rejected:
            raise SchemaError(f"no valid records in {path} ({len(rejected)} malformed lines)")
        self.rejected.extend(rejected)
        return self.ingest_records(docs)

    def ingest_records(self, records: Iterable[RawLogRecord | dict]) -> int:
        with self._lock:
            start = len(self._records)
            new = []
            for i, rec in enumerate(records):
                if isinstance(rec, dict):
                    rec = RawLogRecord.from_json(rec)
                new.append(RawLogRecord(
                    rec.ts, rec.component, rec.level, rec.message,
                    rec.logging_path, rec.request_id, dict(rec.fields), start + i,
                ))
            for rec in new:
                self._records.append(rec)
                if rec.request_id is not None:
                    self._by_request[rec.request_id].append(rec.seq)
                self._field_keys.update(rec.fields)
            if new:
                keys = [(r.ts, r.seq) for r in new]
                if self._order and keys[0] < self._order[-1] or keys != sorted(keys):
                    self._order = sorted(self._order + keys)
                else:
                    self._order = self._order + keys
                for rid in {r.request_id for r in new if r.request_id is not None}:
                    self._by_request[rid].sort(key=lambda s: (self._records[s].ts, s))
            return len(new)

    def execute_query(self, q: LogQuery) -> list[RawLogRecord]:
        known = self._field_keys
        for p in q.predicates:
            if p.field not in BUILTIN_FIELDS and p.field not in known:
                raise UnknownField(p.field)
        order = self._order
        lo = bisect.bisect_left(order, (q.time_from, -1))
        hi = bisect.bisect_left(order, (q.time_to, -1))
        out: list[RawLogRecord] = []
        for _, seq in order[lo:hi]:
            rec = self._records[seq]
            if all(p.matches(rec.get(p.field)) for p in q.predicates):
                out.append(rec)
                if q.limit is not None and len(out) >= q.limit:
                    break
        return out

    def fetch_by_request_ids(self, ids: Iterable[str]) -> dict[str, list[RawLogRecord]]:
        return {rid: [self._records[s] for s in self._by_request.get(rid, ())] for rid in ids}

    def sample(self, n: int = 20, time_from: int | None = None, time_to: int | None = None,
               component: str | None = None) -> list[RawLogRecord]:
        """Evenly spaced examples from a time window, used to show the log schema."""
        lo = 0 if time_from is None else bisect.bisect_left(self._order, (time_from, -1))
        hi = len(self._order) if time_to is None else bisect.bisect_left(self._order, (time_to, -1))
        window = [self._records[s] for _, s in self._order[lo:hi]]
        if component is not None:
            window = [r for r in window if r.component == component] or window
        if len(window) <= n:
            return window
        step = len(window) / n
        return [window[int(i * step)] for i in range(n)]


# --------------------------------------------------------------------------
# DSL text form


def format_ts(ms: int) -> str:
    dt = datetime.fromtimestamp(ms / 1000, tz=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%S.") + f"{ms % 1000:03d}Z"


def parse_ts(text: str) -> int:
    if re.fullmatch(r"\d+", text):
        return int(text)
    t = text[:-1] + "+00:00" if text.endswith(("Z", "z")) else text
    try:
        dt = datetime.fromisoformat(t)
    except ValueError:
        raise DslSyntaxError(f"bad timestamp {text!r}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    delta = dt - datetime(1970, 1, 1, tzinfo=timezone.utc)
    return (delta.days * 86_400_000) + delta.seconds * 1000 + delta.microseconds // 1000


def _quote(value: str) -> str:
    return json.dumps(value, ensure_ascii=False)


def format_query(q: LogQuery) -> str:
    parts = [f"FROM {format_ts(q.time_from)} TO {format_ts(q.time_to)}"]
    if q.predicates:
        preds = []
        for p in q.predicates:
            if p.op == "in":
                rhs = "(" + ", ".join(_quote(v) for v in p.value) + ")"
            else:
                rhs = _quote(p.value)
            preds.append(f"{p.field} {_OP_SYMBOLS[p.op]} {rhs}")
        parts.append("WHERE " + " AND ".join(preds))
    if q.limit is not None:
        parts.append(f"LIMIT {q.limit}")
    return " ".join(parts)


_DSL_TOKEN = re.compile(
    r"""\s*(?:
        (?P<string>"(?:[^"\\]|\\.)*")
      | (?P<op>=~|!=|=|\(|\)|,)
      | (?P<word>[^\s"=!(),]+)
    )""",
    re.VERBOSE,
)
_FIELD_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_.\-]*\Z")


def _dsl_tokens(text: str) -> list[tuple[str, str]]:
    toks, pos = [], 0
    text = text.strip()
    while pos < len(text):
        m = _DSL_TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise DslSyntaxError(f"unexpected input at offset {pos}: {text[pos:pos + 20]!r}")
        kind = m.lastgroup
        tok = m.group(kind)
        if kind == "string":
            try:
                tok = json.loads(tok)
            except json.JSONDecodeError:
                raise DslSyntaxError(f"bad string literal {tok}") from None
        toks.append((kind, tok))
        pos = m.end()
    return toks


def parse_query(text: str, window: tuple[int, int] | None = None) -> LogQuery:
    """Parse the textual DSL. ``window`` supplies FROM/TO when they are omitted."""
    toks = _dsl_tokens(text)
    i = 0

    def peek_word(*words):
        return i < len(toks) and toks[i][0] == "word" and toks[i][1].upper() in words

    def take(kind=None, what="token"):
        nonlocal i
        if i >= len(toks) or (kind and toks[i][0] != kind):
            got = "end of query" if i >= len(toks) else repr(toks[i][1])
            raise DslSyntaxError(f"expected {what}, got {got}")
        i += 1
        return toks[i - 1][1]

    if peek_word("FROM"):
        i += 1
        t_from = parse_ts(take("word", "timestamp"))
        if not peek_word("TO"):
            raise DslSyntaxError("expected TO after FROM <timestamp>")
        i += 1
        t_to = parse_ts(take("word", "timestamp"))
    elif window is not None:
        t_from, t_to = window
    else:
        raise DslSyntaxError("query must start with FROM <timestamp> TO <timestamp>")

    preds: list[FieldPredicate] = []
    if peek_word("WHERE"):
        i += 1
        while True:
            name = take("word", "field name")
            if not _FIELD_RE.match(name):
                raise DslSyntaxError(f"bad field name {name!r}")
            if peek_word("CONTAINS"):
                i += 1
                op = "contains"
            elif peek_word("IN"):
                i += 1
                op = "in"
            else:
                sym = take("op", "operator")
                op = {"=": "eq", "!=": "neq", "=~": "regex"}.get(sym)
                if op is None:
                    raise DslSyntaxError(f"unknown operator {sym!r}")
            if op == "in":
                if take("op", "'('") != "(":
                    raise DslSyntaxError("expected '(' after IN")
                values = []
                while True:
                    values.append(take("string", "quoted value"))
                    sep = take("op", "',' or ')'")
                    if sep == ")":
                        break
                    if sep != ",":
                        raise DslSyntaxError("expected ',' or ')' in IN list")
                preds.append(FieldPredicate(name, "in", tuple(values)))
            else:
                value = take("string", "quoted value")
                if op == "regex":
                    try:
                        full_match(value, "")
                    except RegexError as exc:
                        raise DslSyntaxError(str(exc)) from None
                preds.append(FieldPredicate(name, op, value))
            if peek_word("AND"):
                i += 1
                continue
            break
    limit = None
    if peek_word("LIMIT"):
        i += 1
        raw = take("word", "limit")
        if not raw.isdigit() or int(raw) <= 0:
            raise DslSyntaxError(f"bad LIMIT {raw!r}")
        limit = int(raw)
    if i != len(toks):
        raise DslSyntaxError(f"unexpected trailing input {toks[i][1]!r}")
    try:
        return LogQuery(t_from, t_to, tuple(preds), limit)
    except ValueError as exc:
        raise DslSyntaxError(str(exc)) from None


def dsl_grammar_doc() -> str:
    """Grammar reference handed to the scoping agent."""
    fields = ", ".join(BUILTIN_FIELDS)
    return f"""LOG QUERY DSL
query      := FROM <timestamp> TO <timestamp> [WHERE predicate (AND predicate)*] [LIMIT <n>]
timestamp  := ISO-8601 UTC with milliseconds, e.g. 2025-07-01T10:00:00.000Z, or epoch millis
predicate  := <field> = "<value>"          exact match (numeric strings compare numerically)
            | <field> != "<value>"         negated match (absent fields satisfy it)
            | <field> =~ "<regex>"         RE2 regex, must match the whole value
            | <field> CONTAINS "<text>"    substring match
            | <field> IN ("<v1>", "<v2>")  any of the listed values
field      := one of {fields}, or any key of the structured "fields" object
Semantics: FROM is inclusive, TO is exclusive; predicates are AND-ed; results are
ordered by (ts, ingestion order). Values are double-quoted JSON strings.
"""
