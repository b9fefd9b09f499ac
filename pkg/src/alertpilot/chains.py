"""Per-request spatiotemporal event chains."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from .errors import EmptyRequest
from .logstore import RawLogRecord, format_ts
from .parsing import LogEvent

DEFAULT_RENDER_BUDGET = 16 * 1024


@dataclass(frozen=True)
class EventRef:
    event_id: str
    first_ts: int
    level: str = "info"
    seq: int = -1


@dataclass(frozen=True)
class ComponentSegment:
    component: str
    event_refs: tuple[EventRef, ...]

    @property
    def earliest_ts(self) -> int:
        return min(ref.first_ts for ref in self.event_refs)


@dataclass(frozen=True)
class LogChain:
    request_id: str
    segments: tuple[ComponentSegment, ...]
    total_raw_events: int

    @property
    def event_ids(self) -> list[str]:
        return [ref.event_id for seg in self.segments for ref in seg.event_refs]

    @property
    def components(self) -> list[str]:
        return [seg.component for seg in self.segments]

    def to_json(self) -> dict:
        return {
            "request_id": self.request_id,
            "segments": [
                {
                    "component": seg.component,
                    "earliest_ts": seg.earliest_ts,
                    "events": [{"event_id": r.event_id, "first_ts": r.first_ts} for r in seg.event_refs],
                }
                for seg in self.segments
            ],
            "total_raw_events": self.total_raw_events,
        }


def build_chain(request_id: str, records: list[RawLogRecord],
                event_of: Mapping[int, str]) -> LogChain:
    """Deduplicate to first occurrences, order by (ts, seq), group by component.

    All occurrences of a component's events form one segment even when the
    component's records interleave with other components; segments are ordered
    by their earliest event (ties by the seq of that event).
    """
    if not records:
        raise EmptyRequest(f"request {request_id!r} has no records")
    ordered = sorted(records, key=lambda r: (r.ts, r.seq))
    seen: set[str] = set()
    segments: dict[str, list[EventRef]] = {}
    for rec in ordered:
        eid = event_of[rec.seq]
        if eid in seen:
            continue
        seen.add(eid)
        segments.setdefault(rec.component, []).append(EventRef(eid, rec.ts, rec.level, rec.seq))
    # dict preserves first-appearance order, which is (earliest_ts, seq) order
    return LogChain(
        request_id=request_id,
        segments=tuple(ComponentSegment(c, tuple(refs)) for c, refs in segments.items()),
        total_raw_events=len(records),
    )


def first_messages(records: list[RawLogRecord], event_of: Mapping[int, str]) -> dict[str, str]:
    out: dict[str, str] = {}
    for rec in sorted(records, key=lambda r: (r.ts, r.seq)):
        out.setdefault(event_of[rec.seq], rec.message)
    return out


def render_chain(chain: LogChain, catalog: Mapping[str, LogEvent],
                 sample_messages: Mapping[str, str], budget: int = DEFAULT_RENDER_BUDGET) -> str:
    """Readable chain block, truncated from the tail to fit ``budget`` bytes.

    When events are dropped the output ends with ``…(k events elided)``; the
    text before that marker is at most ``budget`` bytes.
    """
    lines: list[tuple[bool, str]] = []
    for seg in chain.segments:
        lines.append((True, f"[{seg.component} @ {format_ts(seg.earliest_ts)}]"))
        for ref in seg.event_refs:
            example = sample_messages.get(ref.event_id, "")
            lines.append((False, f"  {format_ts(ref.first_ts)}  {ref.level.upper():5}  "
                                 f"{catalog[ref.event_id].template}  | example: {example}  [{ref.event_id}]"))
    total_events = sum(len(seg.event_refs) for seg in chain.segments)
    full = "\n".join(text for _, text in lines) + "\n"
    if len(full.encode()) <= budget:
        return full
    kept: list[tuple[bool, str]] = []
    size = 0
    for is_heading, text in lines:
        cost = len(text.encode()) + 1
        if size + cost > budget:
            break
        kept.append((is_heading, text))
        size += cost
    while kept and kept[-1][0]:
        kept.pop()
    shown = sum(1 for is_heading, _ in kept if not is_heading)
    body = "".join(text + "\n" for _, text in kept)
    return body + f"…({total_events - shown} events elided)\n"
