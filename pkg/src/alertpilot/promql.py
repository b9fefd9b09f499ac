"""Alert definitions and a small PromQL subset parser.

Accepted shape (whitespace-insensitive)::

    [agg [by (l1, ...)] (] [rate|increase (] metric{m1, ...}[window] [)] [)] [by (l1, ...)] [cmp threshold]

Anything outside that shape is rejected with ``UnsupportedConstruct`` (a known
PromQL feature we deliberately do not model) or ``PromQLSyntaxError``.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InputError, PromQLSyntaxError, SchemaError, UnsupportedConstruct
from .regex import RegexError, compile_regex

RANGE_FUNCTIONS = ("rate", "increase")
AGGREGATIONS = ("sum", "avg", "min", "max", "count")
COMPARATORS = {"<": "lt", "<=": "le", ">": "gt", ">=": "ge", "==": "eq", "!=": "ne"}
CMP_SYMBOLS = {v: k for k, v in COMPARATORS.items()}
MATCH_OPS = {"=": "eq", "!=": "neq", "=~": "regex", "!~": "nregex"}
MATCH_SYMBOLS = {v: k for k, v in MATCH_OPS.items()}
SEVERITIES = ("info", "warning", "critical")

_KNOWN_UNSUPPORTED_FUNCS = {
    "irate", "delta", "idelta", "deriv", "histogram_quantile", "abs", "absent",
    "absent_over_time", "avg_over_time", "sum_over_time", "max_over_time",
    "min_over_time", "count_over_time", "quantile_over_time", "stddev_over_time",
    "label_replace", "label_join", "predict_linear", "clamp", "clamp_max",
    "clamp_min", "round", "ceil", "floor", "vector", "scalar", "time", "changes",
    "resets", "sort", "sort_desc", "timestamp", "exp", "ln", "log2", "log10", "sqrt",
}
_UNSUPPORTED_AGGS = {"topk", "bottomk", "quantile", "stddev", "stdvar", "count_values", "group"}
_UNSUPPORTED_KEYWORDS = {
    "offset", "without", "bool", "on", "ignoring", "group_left", "group_right",
    "and", "or", "unless", "atan2",
}

_DURATION_UNITS = {"s": 1, "m": 60, "h": 3600, "d": 86400}
_DURATION_RE = re.compile(r"(?:\d+[smhd])+\Z")
_DURATION_PART = re.compile(r"(\d+)([smhd])")
_LABEL_KEY_RE = re.compile(r"[a-zA-Z_][a-zA-Z0-9_]*\Z")


@dataclass(frozen=True)
class LabelMatcher:
    key: str
    op: str  # eq | neq | regex | nregex
    value: str

    def __post_init__(self):
        if not _LABEL_KEY_RE.match(self.key):
            raise ValueError(f"invalid label key {self.key!r}")
        if self.op not in MATCH_SYMBOLS:
            raise ValueError(f"invalid matcher op {self.op!r}")
        if self.op in ("regex", "nregex"):
            compile_regex(self.value)

    def __str__(self) -> str:
        return f"{self.key}{MATCH_SYMBOLS[self.op]}{quote(self.value)}"


@dataclass(frozen=True)
class AlertQueryIR:
    metric: str
    matchers: tuple[LabelMatcher, ...] = ()
    range_window: int | None = None
    range_fn: str = "none"
    agg: str = "none"
    agg_by: tuple[str, ...] = ()
    cmp: str | None = None
    threshold: float | None = None

    def __post_init__(self):
        if self.range_fn != "none" and self.range_window is None:
            raise ValueError("range function requires a range window")
        if self.cmp is not None and (self.threshold is None or not math.isfinite(self.threshold)):
            raise ValueError("comparison requires a finite threshold")


@dataclass
class AlertDefinition:
    name: str
    expr: str
    for_duration: int = 0
    severity: str = "warning"
    annotations: dict[str, str] = field(default_factory=dict)
    fired_at: int = 0
    window_hint: int = 300

    def __post_init__(self):
        if not self.expr or not self.expr.strip():
            raise SchemaError("alert expr must be non-empty")
        if self.for_duration < 0:
            raise SchemaError("alert 'for' must be >= 0")
        if self.fired_at <= 0:
            raise SchemaError("alert fired_at must be a positive epoch-millis timestamp")
        if self.severity not in SEVERITIES:
            raise SchemaError(f"unknown severity {self.severity!r}")

    @classmethod
    def from_dict(cls, doc: dict) -> "AlertDefinition":
        try:
            return cls(
                name=str(doc["name"]),
                expr=str(doc["expr"]),
                for_duration=_duration_field(doc.get("for", 0)),
                severity=str(doc.get("severity", "warning")),
                annotations={str(k): str(v) for k, v in (doc.get("annotations") or {}).items()},
                fired_at=int(doc["fired_at"]),
                window_hint=_duration_field(doc.get("window", "5m")),
            )
        except KeyError as exc:
            raise SchemaError(f"alert definition missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"bad alert definition: {exc}") from None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "expr": self.expr,
            "for": f"{self.for_duration}s",
            "severity": self.severity,
            "annotations": dict(self.annotations),
            "fired_at": self.fired_at,
            "window": f"{self.window_hint}s",
        }

    def query_window(self) -> tuple[int, int]:
        """Return the closed interval [fired_at - window - for, fired_at] in millis."""
        start = self.fired_at - 1000 * (self.window_hint + self.for_duration)
        return start, self.fired_at


def load_alert(path: str | Path) -> AlertDefinition:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read alert file {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"alert file {path} is not JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError("alert file must hold a JSON object")
    return AlertDefinition.from_dict(doc)


def parse_duration(text: str) -> int:
    """``"1m"`` -> 60. Compound forms such as ``1h30m`` are accepted."""
    if not _DURATION_RE.match(text):
        raise ValueError(f"bad duration {text!r}")
    return sum(int(n) * _DURATION_UNITS[u] for n, u in _DURATION_PART.findall(text))


def _duration_field(value) -> int:
    if isinstance(value, bool):
        raise ValueError("duration cannot be boolean")
    if isinstance(value, (int, float)):
        return int(value)
    return parse_duration(str(value).strip())


def quote(value: str) -> str:
    out = value.replace("\\", "\\\\").replace('"', '\\"')
    out = out.replace("\n", "\\n").replace("\t", "\\t").replace("\r", "\\r")
    return f'"{out}"'


# --------------------------------------------------------------------------
# tokenizer

_ESCAPES = {"\\": "\\", '"': '"', "'": "'", "n": "\n", "t": "\t", "r": "\r"}
_OPERATORS = ("=~", "!~", "!=", "==", ">=", "<=", "=", ">", "<", "+", "-", "*", "/", "%", "^", "@")
_PUNCT = "{}()[],:"
_IDENT_START = re.compile(r"[a-zA-Z_:]")
_IDENT = re.compile(r"[a-zA-Z_:][a-zA-Z0-9_:]*")
_NUMBER = re.compile(r"[0-9]*\.?[0-9]+(?:[eE][+-]?[0-9]+)?|[0-9]+\.")
_DURATION_TOKEN = re.compile(r"(?:[0-9]+[a-zA-Z]+)+")


@dataclass(frozen=True)
class _Tok:
    kind: str  # ident | string | number | duration | op | punct | eof
    text: str
    pos: int
    value: object = None


def _tokenize(src: str) -> list[_Tok]:
    toks: list[_Tok] = []
    i, n = 0, len(src)
    while i < n:
        ch = src[i]
        if ch.isspace():
            i += 1
            continue
        if ch == "#":
            nl = src.find("\n", i)
            i = n if nl < 0 else nl + 1
            continue
        if ch in "\"'`":
            value, end = _read_string(src, i)
            toks.append(_Tok("string", src[i:end], i, value))
            i = end
            continue
        if ch.isascii() and ch.isdigit() or (ch == "." and i + 1 < n and src[i + 1] in "0123456789"):
            m = _DURATION_TOKEN.match(src, i)
            if m and not _NUMBER.fullmatch(m.group()) and not re.match(r"[0-9]+[eE]", m.group()):
                toks.append(_Tok("duration", m.group(), i))
                i = m.end()
                continue
            m = _NUMBER.match(src, i)
            toks.append(_Tok("number", m.group(), i))
            i = m.end()
            continue
        if _IDENT_START.match(ch) and ch != ":":
            m = _IDENT.match(src, i)
            toks.append(_Tok("ident", m.group(), i))
            i = m.end()
            continue
        for op in _OPERATORS:
            if src.startswith(op, i):
                toks.append(_Tok("op", op, i))
                i += len(op)
                break
        else:
            if ch in _PUNCT:
                toks.append(_Tok("punct", ch, i))
                i += 1
                continue
            raise PromQLSyntaxError(f"unexpected character {ch!r}", i)
    toks.append(_Tok("eof", "", n))
    return toks


def _read_string(src: str, start: int) -> tuple[str, int]:
    q = src[start]
    i = start + 1
    out = []
    while i < len(src):
        ch = src[i]
        if ch == q:
            return "".join(out), i + 1
        if ch == "\\" and q != "`":
            if i + 1 >= len(src):
                break
            esc = src[i + 1]
            if esc not in _ESCAPES:
                raise PromQLSyntaxError(f"unknown escape \\{esc}", i, "one of \\\\ \\\" \\' \\n \\t \\r")
            out.append(_ESCAPES[esc])
            i += 2
            continue
        out.append(ch)
        i += 1
    raise PromQLSyntaxError("unterminated string", start, f"closing {q}")


# --------------------------------------------------------------------------
# parser


class _Parser:
    def __init__(self, src: str):
        self.toks = _tokenize(src)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> _Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def advance(self) -> _Tok:
        t = self.toks[self.i]
        if t.kind != "eof":
            self.i += 1
        return t

    def expect(self, kind: str, text: str | None = None, what: str | None = None) -> _Tok:
        t = self.tok
        if t.kind != kind or (text is not None and t.text != text):
            self._fail(what or (repr(text) if text else kind))
        return self.advance()

    def _fail(self, expected: str):
        t = self.tok
        self._check_unsupported(t)
        got = "end of input" if t.kind == "eof" else repr(t.text)
        raise PromQLSyntaxError(f"unexpected {got}", t.pos, expected)

    def _check_unsupported(self, t: _Tok):
        if t.kind == "ident" and t.text in _UNSUPPORTED_KEYWORDS:
            raise UnsupportedConstruct(f"'{t.text}'", t.pos)
        if t.kind == "op" and t.text in "+-*/%^":
            raise UnsupportedConstruct(f"binary operator '{t.text}'", t.pos)
        if t.kind == "op" and t.text == "@":
            raise UnsupportedConstruct("'@' modifier", t.pos)

    # grammar -------------------------------------------------------------

    def parse(self) -> AlertQueryIR:
        t = self.tok
        if t.kind == "eof":
            raise PromQLSyntaxError("empty expression", 0, "metric name")
        if t.kind in ("number", "string"):
            raise UnsupportedConstruct("scalar expression", t.pos)
        if t.kind == "punct" and t.text == "(":
            raise UnsupportedConstruct("parenthesised sub-expression", t.pos)
        if t.kind == "punct" and t.text == "{":
            raise UnsupportedConstruct("selector without metric name", t.pos)

        agg, agg_by = "none", ()
        nxt = self.peek()
        if t.kind == "ident" and (
            (nxt.kind == "punct" and nxt.text == "(")
            or (nxt.kind == "ident" and nxt.text in ("by", "without"))
        ) and (t.text in AGGREGATIONS or t.text in _UNSUPPORTED_AGGS):
            if t.text in _UNSUPPORTED_AGGS:
                raise UnsupportedConstruct(f"aggregation '{t.text}'", t.pos)
            agg = self.advance().text
            if self.tok.kind == "ident" and self.tok.text in ("by", "without"):
                agg_by = self._by_clause()
            self.expect("punct", "(")
            metric, matchers, window, fn = self._inner()
            self.expect("punct", ")")
            if self.tok.kind == "ident" and self.tok.text in ("by", "without"):
                if agg_by:
                    raise PromQLSyntaxError("duplicate grouping clause", self.tok.pos, "comparison or end")
                agg_by = self._by_clause()
        else:
            metric, matchers, window, fn = self._inner()

        cmp, threshold = None, None
        t = self.tok
        if t.kind == "op" and t.text in COMPARATORS:
            self.advance()
            cmp = COMPARATORS[t.text]
            if self.tok.kind == "ident" and self.tok.text == "bool":
                raise UnsupportedConstruct("'bool' modifier", self.tok.pos)
            threshold = self._threshold()
        if self.tok.kind != "eof":
            self._fail("end of expression")
        return AlertQueryIR(
            metric=metric,
            matchers=tuple(matchers),
            range_window=window,
            range_fn=fn,
            agg=agg,
            agg_by=tuple(agg_by),
            cmp=cmp,
            threshold=threshold,
        )

    def _inner(self):
        t = self.tok
        if t.kind != "ident":
            if t.kind == "punct" and t.text == "{":
                raise UnsupportedConstruct("selector without metric name", t.pos)
            self._fail("metric name")
        nxt = self.peek()
        if nxt.kind == "punct" and nxt.text == "(":
            name = t.text
            if name in AGGREGATIONS or name in _UNSUPPORTED_AGGS:
                raise UnsupportedConstruct(f"nested aggregation '{name}'", t.pos)
            if name not in RANGE_FUNCTIONS:
                raise UnsupportedConstruct(f"function '{name}'", t.pos)
            self.advance()
            self.advance()
            inner = self.tok
            if inner.kind == "ident" and self.peek().kind == "punct" and self.peek().text == "(":
                raise UnsupportedConstruct(f"nested function call '{inner.text}'", inner.pos)
            metric, matchers, window = self._selector()
            if window is None:
                self._fail("'[' range window")
            self.expect("punct", ")")
            return metric, matchers, window, name
        if t.text in _UNSUPPORTED_KEYWORDS:
            raise UnsupportedConstruct(f"'{t.text}'", t.pos)
        if t.text in _KNOWN_UNSUPPORTED_FUNCS:
            raise UnsupportedConstruct(f"function '{t.text}'", t.pos)
        metric, matchers, window = self._selector()
        return metric, matchers, window, "none"

    def _selector(self):
        name_tok = self.expect("ident", what="metric name")
        matchers: list[LabelMatcher] = []
        if self.tok.kind == "punct" and self.tok.text == "{":
            self.advance()
            while not (self.tok.kind == "punct" and self.tok.text == "}"):
                matchers.append(self._matcher())
                if self.tok.kind == "punct" and self.tok.text == ",":
                    self.advance()
                    continue
                if not (self.tok.kind == "punct" and self.tok.text == "}"):
                    self._fail("',' or '}'")
            self.advance()
        window = None
        if self.tok.kind == "punct" and self.tok.text == "[":
            self.advance()
            dur = self.tok
            if dur.kind != "duration":
                self._fail("duration such as 5m")
            try:
                window = parse_duration(dur.text)
            except ValueError:
                raise PromQLSyntaxError(f"bad duration {dur.text!r}", dur.pos, "digits with s/m/h/d suffix") from None
            if window <= 0:
                raise PromQLSyntaxError("range window must be positive", dur.pos, "positive duration")
            self.advance()
            if self.tok.kind == "punct" and self.tok.text == ":":
                raise UnsupportedConstruct("subquery", self.tok.pos)
            self.expect("punct", "]")
        t = self.tok
        if t.kind == "ident" and t.text == "offset":
            raise UnsupportedConstruct("'offset'", t.pos)
        if t.kind == "op" and t.text == "@":
            raise UnsupportedConstruct("'@' modifier", t.pos)
        return name_tok.text, matchers, window

    def _matcher(self) -> LabelMatcher:
        key = self.tok
        if key.kind != "ident" or not _LABEL_KEY_RE.match(key.text):
            self._fail("label name")
        self.advance()
        op = self.tok
        if op.kind != "op" or op.text not in MATCH_OPS:
            self._fail("one of = != =~ !~")
        self.advance()
        val = self.tok
        if val.kind != "string":
            self._fail("quoted label value")
        self.advance()
        kind = MATCH_OPS[op.text]
        if kind in ("regex", "nregex"):
            try:
                compile_regex(val.value)
            except RegexError:
                raise PromQLSyntaxError("invalid regex", val.pos, "valid RE2 pattern") from None
        return LabelMatcher(key.text, kind, val.value)

    def _by_clause(self) -> tuple[str, ...]:
        kw = self.advance()
        if kw.text == "without":
            raise UnsupportedConstruct("'without'", kw.pos)
        self.expect("punct", "(")
        labels: list[str] = []
        while not (self.tok.kind == "punct" and self.tok.text == ")"):
            lab = self.tok
            if lab.kind != "ident" or not _LABEL_KEY_RE.match(lab.text):
                self._fail("label name")
            labels.append(lab.text)
            self.advance()
            if self.tok.kind == "punct" and self.tok.text == ",":
                self.advance()
            elif not (self.tok.kind == "punct" and self.tok.text == ")"):
                self._fail("',' or ')'")
        self.advance()
        return tuple(labels)

    def _threshold(self) -> float:
        sign = 1.0
        t = self.tok
        if t.kind == "op" and t.text in "+-" and len(t.text) == 1:
            sign = -1.0 if t.text == "-" else 1.0
            self.advance()
            t = self.tok
        if t.kind == "ident":
            if t.text.lower() in ("inf", "nan"):
                raise PromQLSyntaxError("threshold must be finite", t.pos, "finite number")
            raise UnsupportedConstruct("vector comparison", t.pos)
        if t.kind != "number":
            self._fail("numeric threshold")
        self.advance()
        value = sign * float(t.text)
        if not math.isfinite(value):
            raise PromQLSyntaxError("threshold must be finite", t.pos, "finite number")
        return value + 0.0  # folds -0.0 into 0.0


def parse_alert_expr(expr: str) -> AlertQueryIR:
    if not expr or not expr.strip():
        raise PromQLSyntaxError("empty expression", 0, "metric name")
    return _Parser(expr).parse()


# --------------------------------------------------------------------------
# printing and cache keys


def format_ir(ir: AlertQueryIR) -> str:
    """Serialize ``ir`` back into the accepted grammar; parse(format_ir(ir)) == ir."""
    sel = ir.metric
    if ir.matchers:
        sel += "{" + ",".join(str(m) for m in ir.matchers) + "}"
    if ir.range_window is not None:
        sel += f"[{ir.range_window}s]"
    if ir.range_fn != "none":
        sel = f"{ir.range_fn}({sel})"
    if ir.agg != "none":
        sel = f"{ir.agg}({sel})"
        if ir.agg_by:
            sel += " by(" + ",".join(ir.agg_by) + ")"
    if ir.cmp is not None:
        sel += f" {CMP_SYMBOLS[ir.cmp]} {ir.threshold!r}"
    return sel


def normalize_ir(ir: AlertQueryIR) -> AlertQueryIR:
    return AlertQueryIR(
        metric=ir.metric,
        matchers=tuple(sorted(ir.matchers, key=lambda m: (m.key, m.op, m.value))),
        range_window=ir.range_window,
        range_fn=ir.range_fn,
        agg=ir.agg,
        agg_by=tuple(sorted(set(ir.agg_by))),
        cmp=ir.cmp,
        threshold=None if ir.threshold is None else float(ir.threshold),
    )


def canonical_cache_key(expr: str) -> str:
    return format_ir(normalize_ir(parse_alert_expr(expr)))


def extract_label_fields(ir: AlertQueryIR) -> list[tuple[str, str, str]]:
    fields = [(m.key, m.op, m.value) for m in ir.matchers]
    fields.extend((key, "eq", "") for key in ir.agg_by)
    return fields
