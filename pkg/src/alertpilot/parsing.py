"""Two-tier log parsing: group by (component, logging path), then Drain within each group."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable

from .logstore import RawLogRecord

WILDCARD = "<*>"
NOPATH = "__nopath__"

_INT = re.compile(r"[+-]?\d+")
_HEX = re.compile(r"(?:0[xX])?[0-9a-fA-F]{8,}")
_IPV4 = re.compile(r"(?:\d{1,3}\.){3}\d{1,3}(?::\d+)?")
_HAS_DIGIT = re.compile(r"\d")


@dataclass(frozen=True)
class DrainParams:
    tree_depth: int = 4
    sim_threshold: float = 0.5
    max_children: int = 100

    def __post_init__(self):
        if self.tree_depth < 2:
            raise ValueError("tree_depth must be >= 2")
        if not 0 < self.sim_threshold <= 1:
            raise ValueError("sim_threshold must be in (0, 1]")
        if self.max_children < 1:
            raise ValueError("max_children must be >= 1")


@dataclass(frozen=True)
class LogEvent:
    event_id: str
    template_tokens: tuple[str, ...]
    logging_path: str | None
    component: str

    @property
    def template(self) -> str:
        return " ".join(self.template_tokens)

    def to_json(self) -> dict:
        return {
            "event_id": self.event_id,
            "component": self.component,
            "logging_path": self.logging_path,
            "template": self.template,
        }


@dataclass(frozen=True)
class ParseAssignment:
    record_seq: int
    event_id: str


def mask_token(token: str) -> str:
    if _INT.fullmatch(token) or _HEX.fullmatch(token) or _IPV4.fullmatch(token):
        return WILDCARD
    return token


def tokenize(message: str) -> list[str]:
    tokens = [mask_token(t) for t in message.split()]
    return tokens or [WILDCARD]


def group_key(rec: RawLogRecord) -> tuple[str, str]:
    return rec.component, rec.logging_path if rec.logging_path is not None else NOPATH


def coarse_group(records: Iterable[RawLogRecord]) -> dict[tuple[str, str], list[RawLogRecord]]:
    groups: dict[tuple[str, str], list[RawLogRecord]] = {}
    for rec in records:
        groups.setdefault(group_key(rec), []).append(rec)
    return groups


@dataclass
class _Cluster:
    tokens: list[str]
    members: list[int] = field(default_factory=list)


class _Node:
    __slots__ = ("children", "clusters")

    def __init__(self):
        self.children: dict[str, _Node] = {}
        self.clusters: list[int] = []


class Drain:
    """Fixed-depth parse tree: length layer, then the first ``depth - 2`` tokens, then a leaf."""

    def __init__(self, params: DrainParams = DrainParams()):
        self.params = params
        self.root = _Node()
        self.clusters: list[_Cluster] = []

    def _leaf(self, tokens: list[str]) -> _Node:
        node = self.root.children.setdefault(str(len(tokens)), _Node())
        for token in tokens[: self.params.tree_depth - 2]:
            key = WILDCARD if _HAS_DIGIT.search(token) else token
            child = node.children.get(key)
            if child is None:
                if len(node.children) < self.params.max_children:
                    child = node.children[key] = _Node()
                else:
                    child = node.children.setdefault(WILDCARD, _Node())
            node = child
        return node

    def add(self, tokens: list[str], member: int) -> int:
        leaf = self._leaf(tokens)
        best, best_sim = -1, -1.0
        for cid in leaf.clusters:
            tpl = self.clusters[cid].tokens
            sim = sum(a == b for a, b in zip(tokens, tpl)) / len(tokens)
            if sim > best_sim:
                best, best_sim = cid, sim
        if best >= 0 and best_sim >= self.params.sim_threshold:
            cluster = self.clusters[best]
            cluster.tokens = [a if a == b else WILDCARD for a, b in zip(cluster.tokens, tokens)]
            cluster.members.append(member)
            return best
        self.clusters.append(_Cluster(list(tokens), [member]))
        leaf.clusters.append(len(self.clusters) - 1)
        return len(self.clusters) - 1


def _extract(group: list[RawLogRecord], params: DrainParams):
    drain = Drain(params)
    for i, rec in enumerate(group):
        drain.add(tokenize(rec.message), i)
    return drain.clusters


def template_extract(group: list[RawLogRecord], params: DrainParams = DrainParams(),
                     id_prefix: str = "E") -> tuple[list[LogEvent], list[ParseAssignment]]:
    """Drain over one coarse group. Clusters that converge to the same template share an event."""
    if not group:
        raise ValueError("group must be non-empty")
    component, path = group_key(group[0])
    logging_path = None if path == NOPATH else path
    events: list[LogEvent] = []
    by_template: dict[tuple[str, ...], LogEvent] = {}
    assignments: list[ParseAssignment] = []
    for cluster in _extract(group, params):
        tokens = tuple(cluster.tokens)
        event = by_template.get(tokens)
        if event is None:
            event = LogEvent(f"{id_prefix}{len(events) + 1}", tokens, logging_path, component)
            by_template[tokens] = event
            events.append(event)
        assignments.extend(ParseAssignment(group[m].seq, event.event_id) for m in cluster.members)
    assignments.sort(key=lambda a: a.record_seq)
    return events, assignments


def parse_all(records: Iterable[RawLogRecord], params: DrainParams = DrainParams()
              ) -> tuple[list[LogEvent], list[ParseAssignment]]:
    groups = coarse_group(records)
    catalog: list[LogEvent] = []
    assignments: list[ParseAssignment] = []
    for key in sorted(groups):
        events, assigned = template_extract(groups[key], params, id_prefix="tmp")
        rename = {}
        for ev in events:
            new_id = f"E{len(catalog) + 1:04d}"
            rename[ev.event_id] = new_id
            catalog.append(LogEvent(new_id, ev.template_tokens, ev.logging_path, ev.component))
        assignments.extend(ParseAssignment(a.record_seq, rename[a.event_id]) for a in assigned)
    assignments.sort(key=lambda a: a.record_seq)
    return catalog, assignments
