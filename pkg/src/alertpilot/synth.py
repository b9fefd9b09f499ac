"""Seeded synthetic workloads: faulty request patterns, an alert that selects them,
ground truth, scripted agent replies and a small SOP corpus."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clustering import _kernels
from .errors import SeparationUnachievable
from .logstore import RawLogRecord
from .parsing import parse_all

GATEWAY = "api-gateway"
SERVICE = "checkout"
ALERT_NAME = "CheckoutServerErrors"
ALERT_EXPR = f'sum(increase(gateway_requests_total{{service="{SERVICE}", code=~"5.."}}[5m])) by (account_id) > 0'
DEFAULT_FIRED_AT = 1_751_364_000_000  # 2025-07-01T10:00:00Z

CROSS_MAX = 0.3
WITHIN_MIN = 0.9

_BACKENDS = [
    "auth-service", "order-service", "payment-service", "inventory-service", "user-service",
    "pricing-service", "shipping-service", "cart-service", "billing-service", "search-service",
    "notification-service", "coupon-service", "ledger-service", "fraud-service", "catalog-service",
    "review-service", "tax-service", "session-service", "media-service", "export-service",
]

# fault kind -> (log phrase, root cause, remediation)
FAULTS: dict[str, tuple[str, str, str]] = {
    "db_pool": ("database connection pool exhausted",
                "database connection pool exhausted under load",
                "Raise the connection pool limit and look for leaked connections."),
    "upstream_timeout": ("upstream dependency timeout",
                         "upstream dependency timed out",
                         "Check the upstream service latency and tune client timeouts and retries."),
    "disk_quota": ("disk quota exceeded",
                   "disk quota exceeded on the storage volume",
                   "Free space or raise the volume quota; audit log rotation."),
    "cert_expired": ("tls certificate expired",
                     "expired TLS certificate on an internal endpoint",
                     "Rotate the certificate and verify the renewal job."),
    "rate_limited": ("rate limiter rejected call",
                     "internal rate limiter rejecting calls",
                     "Review rate limit quotas for the caller and scale the limiter."),
    "cache_down": ("cache cluster unavailable",
                   "cache cluster unavailable",
                   "Fail over the cache cluster and check node health."),
    "queue_backlog": ("message queue backlog overflow",
                      "message queue backlog overflow",
                      "Scale consumers and inspect the dead-letter queue."),
    "dns_failure": ("dns resolution failure",
                    "DNS resolution failure for a dependency",
                    "Check resolver health and the dependency's DNS records."),
    "oom_kill": ("out of memory kill",
                 "worker process killed for exceeding its memory limit",
                 "Raise the memory limit and profile the allocation hot spot."),
    "schema_invalid": ("schema validation error",
                       "request schema validation failure after a contract change",
                       "Roll back the contract change or update the client schema."),
    "deadlock": ("lock acquisition deadlock",
                 "lock acquisition deadlock in the write path",
                 "Inspect lock ordering and kill the blocking transaction."),
    "config_mismatch": ("config version mismatch",
                        "configuration version mismatch between replicas",
                        "Re-sync the configuration and pin the rollout version."),
}
FAULT_ORDER = list(FAULTS)
_CODES = ("500", "503", "502", "504")


@dataclass(frozen=True)
class FaultPattern:
    pattern_id: str
    weight: float
    error_template_ids: tuple[str, ...]
    component_path: tuple[str, ...]
    silent: bool = False


@dataclass(frozen=True)
class SynthSpec:
    n_requests: int
    n_components: int
    fault_patterns: tuple[FaultPattern, ...]
    seed: int = 0
    n_background: int = 0
    jitter: int = 1
    fired_at: int = DEFAULT_FIRED_AT
    window_s: int = 300

    def __post_init__(self):
        if self.n_requests < 1:
            raise ValueError("n_requests must be >= 1")
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if not self.fault_patterns:
            raise ValueError("at least one fault pattern is required")
        if abs(sum(p.weight for p in self.fault_patterns) - 1.0) > 1e-9:
            raise ValueError("pattern weights must sum to 1")
        comps = set(component_names(self.n_components))
        for p in self.fault_patterns:
            if not set(p.component_path) <= comps:
                raise ValueError(f"pattern {p.pattern_id} uses unknown components")
            unknown = set(p.error_template_ids) - set(FAULTS)
            if unknown:
                raise ValueError(f"unknown fault kinds {sorted(unknown)}")


@dataclass
class SynthOutput:
    log_file: Path
    alert_file: Path
    truth_file: Path
    scenario_file: Path
    sop_dir: Path
    components_file: Path
    truth: dict[str, str] = field(default_factory=dict)


def component_names(n: int) -> list[str]:
    names = [GATEWAY]
    for k in range(n - 1):
        names.append(_BACKENDS[k] if k < len(_BACKENDS) else f"svc-{k:02d}")
    return names


def default_spec(n_requests: int, n_patterns: int, seed: int = 0, weights=None,
                 n_background: int | None = None, silent_patterns: tuple[int, ...] = ()) -> SynthSpec:
    """Each pattern gets its own two backends behind the shared gateway."""
    if not 1 <= n_patterns <= len(FAULTS):
        raise ValueError(f"n_patterns must be in [1, {len(FAULTS)}]")
    comps = component_names(1 + 2 * n_patterns)
    if weights is None:
        weights = [1.0 / n_patterns] * n_patterns
    patterns = tuple(
        FaultPattern(
            pattern_id=f"p{k + 1}",
            weight=float(weights[k]),
            error_template_ids=(FAULT_ORDER[k],),
            component_path=(GATEWAY, comps[1 + 2 * k], comps[2 + 2 * k]),
            silent=k in silent_patterns,
        )
        for k in range(n_patterns)
    )
    bg = n_requests // 4 if n_background is None else n_background
    return SynthSpec(n_requests, len(comps), patterns, seed, bg)


# --------------------------------------------------------------------------
# record construction


class _Emitter:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.records: list[dict] = []

    def emit(self, key, ts, component, level, path, rid, message, fields=None):
        self.records.append({
            "_key": key,
            "ts": int(ts),
            "component": component,
            "level": level,
            "logging_path": path,
            "request_id": rid,
            "fields": fields or {},
            "message": message,
        })


def _src(component: str, name: str, line: int) -> str:
    return f"{component.split('-')[0]}/{name}.go:{line}"


def _emit_request(em: _Emitter, rid: str, start: int, path: tuple[str, ...], faults: tuple[str, ...],
                  code: str, account: int, silent: bool, jitter: int, pattern_idx: int) -> None:
    rng = em.rng
    t = start

    def tick():
        nonlocal t
        t += int(rng.integers(1, 15))
        return t

    ip = f"10.{rng.integers(0, 256)}.{rng.integers(0, 256)}.{rng.integers(1, 255)}"
    gw_fields = {"service": SERVICE, "account_id": str(account), "gateway_id": f"gw-{account % 4}"}
    em.emit("gw:recv", tick(), GATEWAY, "info", _src(GATEWAY, "router", 88), rid,
            f"received request POST /api/v1/checkout from {ip}", dict(gw_fields))
    for hop, comp in enumerate(path[1:]):
        em.emit(f"{comp}:start", tick(), comp, "info", _src(comp, "handler", 40 + hop), rid,
                f"{comp} started processing order {int(rng.integers(1000, 99999))}")
    faulty = path[-1]
    err_level = "info" if silent else "error"
    for kind in faults:
        phrase = FAULTS[kind][0]
        base = 100 + 20 * FAULT_ORDER.index(kind)
        em.emit(f"{kind}:detect", tick(), faulty, "info" if silent else "warn", _src(faulty, kind, base), rid,
                f"{phrase} detected while serving order {int(rng.integers(1000, 99999))}")
        for attempt in range(2 + int(rng.integers(0, jitter + 1))):
            em.emit(f"{kind}:retry", tick(), faulty, "info" if silent else "warn", _src(faulty, kind, base + 1),
                    rid, f"retrying after {phrase} attempt {attempt + 1}")
        em.emit(f"{kind}:fail", tick(), faulty, err_level, _src(faulty, kind, base + 2), rid,
                f"{phrase} caused step failure with code {int(rng.integers(1, 90))}")
        em.emit(f"{kind}:abort", tick(), faulty, err_level, _src(faulty, kind, base + 3), rid,
                f"aborting request after {phrase} elapsed {int(rng.integers(5, 900))} ms")
    fields = dict(gw_fields, code=code)
    em.emit("gw:done", tick(), GATEWAY, "info" if silent else "error", _src(GATEWAY, "router", 120), rid,
            f"request completed with status {code} in {t - start} ms", fields)


def _emit_healthy(em: _Emitter, rid: str, start: int, path: tuple[str, ...], account: int) -> None:
    rng = em.rng
    t = start
    gw_fields = {"service": SERVICE, "account_id": str(account), "gateway_id": f"gw-{account % 4}"}
    ip = f"10.{rng.integers(0, 256)}.{rng.integers(0, 256)}.{rng.integers(1, 255)}"
    t += int(rng.integers(1, 15))
    em.emit("gw:recv", t, GATEWAY, "info", _src(GATEWAY, "router", 88), rid,
            f"received request POST /api/v1/checkout from {ip}", dict(gw_fields))
    for hop, comp in enumerate(path[1:]):
        t += int(rng.integers(1, 15))
        em.emit(f"{comp}:start", t, comp, "info", _src(comp, "handler", 40 + hop), rid,
                f"{comp} started processing order {int(rng.integers(1000, 99999))}")
    t += int(rng.integers(1, 15))
    em.emit("gw:done", t, GATEWAY, "info", _src(GATEWAY, "router", 120), rid,
            f"request completed with status 200 in {t - start} ms", dict(gw_fields, code="200"))


def _check_separation(keys_by_request: dict[str, list[str]], truth: dict[str, str]) -> tuple[float, float]:
    vocab = sorted({k for keys in keys_by_request.values() for k in keys})
    index = {k: i for i, k in enumerate(vocab)}
    rids = sorted(truth)
    counts = np.zeros((len(rids), len(vocab)))
    for r, rid in enumerate(rids):
        for k in keys_by_request[rid]:
            counts[r, index[k]] += 1
    sim = _kernels.cosine_matrix(counts)
    labels = np.array([truth[r] for r in rids])
    same = labels[:, None] == labels[None, :]
    within = float(sim[same].min())
    cross = float(sim[~same].max()) if (~same).any() else 0.0
    return within, cross


def generate_records(spec: SynthSpec) -> tuple[list[dict], dict[str, str]]:
    """Records (file order, with a private ``_key`` naming the template) and the truth map."""
    rng = np.random.default_rng(spec.seed)
    weights = np.array([p.weight for p in spec.fault_patterns])
    assign = rng.choice(len(spec.fault_patterns), size=spec.n_requests, p=weights / weights.sum())
    em = _Emitter(rng)
    truth: dict[str, str] = {}
    span = spec.window_s * 1000 - 5000
    lo = spec.fired_at - spec.window_s * 1000
    for k, p_idx in enumerate(assign):
        pattern = spec.fault_patterns[int(p_idx)]
        rid = f"req-{k:05d}"
        truth[rid] = pattern.pattern_id
        _emit_request(em, rid, lo + int(rng.integers(0, span)), pattern.component_path,
                      pattern.error_template_ids, _CODES[int(p_idx) % len(_CODES)],
                      int(rng.integers(1000, 1100)), pattern.silent, spec.jitter, int(p_idx))
    for k in range(spec.n_background):
        pattern = spec.fault_patterns[k % len(spec.fault_patterns)]
        _emit_healthy(em, f"req-ok-{k:05d}", lo + int(rng.integers(0, span)), pattern.component_path,
                      int(rng.integers(1000, 1100)))
    records = sorted(em.records, key=lambda r: (r["ts"], r["request_id"]))
    keys: dict[str, list[str]] = {}
    for r in records:
        if r["request_id"] in truth:
            keys.setdefault(r["request_id"], []).append(r["_key"])
    if len(spec.fault_patterns) > 0 and len(truth) > 1:
        within, cross = _check_separation(keys, truth)
        if within <= WITHIN_MIN or cross >= CROSS_MAX:
            raise SeparationUnachievable(
                f"pattern separation not met: min within-pattern similarity {within:.3f} "
                f"(needs > {WITHIN_MIN}), max cross-pattern {cross:.3f} (needs < {CROSS_MAX})"
            )
    return records, truth


def _rca_reply(pattern: FaultPattern, event_id: str, excerpt: str) -> str:
    kind = pattern.error_template_ids[0]
    doc = {
        "root_causes": [FAULTS[kind][1]],
        "faulty_components": [pattern.component_path[-1]],
        "key_log_evidence": [{"event_id": event_id, "excerpt": excerpt}],
        "inference_details": (
            f"The request enters {GATEWAY}, is forwarded along {' -> '.join(pattern.component_path[1:])}, "
            f"and {pattern.component_path[-1]} reports '{FAULTS[kind][0]}' before the gateway returns an error."
        ),
        "insufficient_logs": pattern.silent,
        "logging_quality_notes": (
            [f"{pattern.component_path[-1]} logs the failure at info level"] if pattern.silent else []
        ),
    }
    return "Analysis complete.\n```json\n" + json.dumps(doc, indent=2) + "\n```\n"


def scenario_rules(spec: SynthSpec, records: list[dict], truth: dict[str, str]) -> list[dict]:
    """Scripted agent replies that reproduce a correct diagnosis of the workload."""
    faulty = [RawLogRecord.from_json(r, seq=i) for i, r in enumerate(records) if r["request_id"] in truth]
    catalog, assignments = parse_all(faulty)
    event_of = {a.record_seq: a.event_id for a in assignments}
    first_error: dict[str, tuple[str, str]] = {}
    for rec in faulty:
        kind = records[rec.seq]["_key"]
        if kind.endswith(":fail") and kind not in first_error:
            first_error[kind] = (event_of[rec.seq], rec.message)

    dsl = f'WHERE component = "{GATEWAY}" AND service = "{SERVICE}" AND code =~ "5.."'
    rules = [{
        "match": "# Task: alert-log correlation (query generation)",
        "role": "reasoning",
        "response": f"Requests failing at the gateway carry the code field.\n```dsl\n{dsl}\n```\n",
    }]
    for pattern in spec.fault_patterns:
        kind = pattern.error_template_ids[0]
        eid, excerpt = first_error.get(f"{kind}:fail", ("", ""))
        rules.append({
            "match": f"{FAULTS[kind][0]} caused step failure",
            "role": "reasoning",
            "response": _rca_reply(pattern, eid, excerpt),
        })
    causes = [FAULTS[p.error_template_ids[0]][1] for p in spec.fault_patterns]
    summary = {
        "summary": f"{ALERT_NAME} fired because checkout requests failed with 5xx codes; "
                   f"{len(causes)} distinct failure pattern(s) were found.",
        "root_causes": causes,
        "suggestions": [FAULTS[p.error_template_ids[0]][2] for p in spec.fault_patterns],
    }
    rules.append({
        "match": "# Diagnostic result summary",
        "role": "fast",
        "response": "```json\n" + json.dumps(summary, indent=2) + "\n```\n",
    })
    return rules


def gen_synth(spec: SynthSpec, out: str | Path) -> SynthOutput:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    records, truth = generate_records(spec)
    log_file = out / "logs.jsonl"
    with open(log_file, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({k: v for k, v in r.items() if k != "_key"}) + "\n")
    alert_file = out / "alert.json"
    alert_file.write_text(json.dumps({
        "name": ALERT_NAME,
        "expr": ALERT_EXPR,
        "for": "60s",
        "severity": "critical",
        "annotations": {"summary": "checkout requests are failing with 5xx at the gateway"},
        "fired_at": spec.fired_at,
        "window": f"{spec.window_s // 60}m",
    }, indent=2) + "\n")
    truth_file = out / "truth.json"
    truth_file.write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n")
    scenario_file = out / "scenarios.json"
    scenario_file.write_text(json.dumps(scenario_rules(spec, records, truth), indent=2) + "\n")
    sop_dir = out / "sops"
    sop_dir.mkdir(exist_ok=True)
    for kind, (phrase, cause, fix) in FAULTS.items():
        (sop_dir / f"sop-{kind}.md").write_text(
            f"tags: {kind.replace('_', ' ')}, checkout\n# Handling {cause}\n\n"
            f"Symptom: logs report '{phrase}'.\n\nProcedure: {fix}\n"
        )
    components_file = out / "components.json"
    comps = component_names(spec.n_components)
    components_file.write_text(json.dumps(
        {c: ("edge gateway that routes checkout traffic" if c == GATEWAY else f"{c.replace('-', ' ')} backend")
         for c in comps}, indent=2, sort_keys=True) + "\n")
    return SynthOutput(log_file, alert_file, truth_file, scenario_file, sop_dir, components_file, truth)
