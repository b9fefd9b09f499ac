from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..errors import DimensionMismatch, EmptyInput, UnknownEvent
from . import _kernels
from ._kernels import TIE_EPS

DEFAULT_THRESHOLD = 0.7


@dataclass(frozen=True)
class EventVocabulary:
    entries: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "index", {e: i for i, e in enumerate(self.entries)})

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True, eq=False)
class RequestEmbedding:
    request_id: str
    counts: np.ndarray

    def scaled(self) -> np.ndarray:
        return np.log1p(self.counts.astype(np.float64))


@dataclass(frozen=True)
class Cluster:
    cluster_id: str
    members: tuple[str, ...]
    representative: str


@dataclass(frozen=True)
class ClusterSet:
    clusters: tuple[Cluster, ...]
    threshold_used: float

    def to_json(self) -> dict:
        return {
            "threshold": self.threshold_used,
            "clusters": [
                {"cluster_id": c.cluster_id, "members": list(c.members), "representative": c.representative}
                for c in self.clusters
            ],
        }

    def partition(self) -> set[frozenset[str]]:
        return {frozenset(c.members) for c in self.clusters}


def build_vocabulary(event_lists: Iterable[Iterable[str]]) -> EventVocabulary:
    events: set[str] = set()
    for ids in event_lists:
        events.update(ids)
    if not events:
        raise EmptyInput("no events to build a vocabulary from")
    return EventVocabulary(tuple(sorted(events)))


def embed_request(request_id: str, event_ids: Iterable[str], vocab: EventVocabulary) -> RequestEmbedding:
    """Count vector over ``vocab`` of the request's raw (non-deduplicated) events."""
    counts = np.zeros(len(vocab), dtype=np.int64)
    for eid, n in Counter(event_ids).items():
        pos = vocab.index.get(eid)
        if pos is None:
            raise UnknownEvent(f"event {eid!r} of request {request_id!r} is not in the vocabulary")
        counts[pos] = n
    return RequestEmbedding(request_id, counts)


def similarity(a: RequestEmbedding, b: RequestEmbedding) -> float:
    """Cosine similarity of the log1p-scaled count vectors, clipped to [0, 1]."""
    if a.counts.shape != b.counts.shape:
        raise DimensionMismatch(f"vector lengths differ: {a.counts.shape[0]} vs {b.counts.shape[0]}")
    va, vb = a.scaled(), b.scaled()
    na, nb = float(np.sqrt(va @ va)), float(np.sqrt(vb @ vb))
    if na == 0.0 or nb == 0.0:
        raise ValueError("similarity is undefined for all-zero embeddings")
    return min(1.0, max(0.0, float(va @ vb) / (na * nb)))


def similarity_matrix(embeddings: Sequence[RequestEmbedding]) -> np.ndarray:
    if not embeddings:
        return np.zeros((0, 0))
    dims = {e.counts.shape for e in embeddings}
    if len(dims) != 1:
        raise DimensionMismatch("embeddings use different vocabularies")
    return _kernels.cosine_matrix(np.stack([e.counts for e in embeddings]))


def select_representative(members: Sequence[str], embeddings: Mapping[str, RequestEmbedding]) -> str:
    """Member closest (cosine) to the centroid of the members' log-scaled vectors."""
    if not members:
        raise ValueError("cluster must be non-empty")
    ordered = sorted(members)
    if len(ordered) == 1:
        return ordered[0]
    scaled = np.stack([embeddings[m].scaled() for m in ordered])
    centroid = scaled.mean(axis=0)
    cn = math.sqrt(float(centroid @ centroid))
    norms = np.sqrt((scaled * scaled).sum(axis=1))
    sims = (scaled @ centroid) / (norms * cn)
    best = float(sims.max())
    for member, s in zip(ordered, sims):
        if s >= best - TIE_EPS:
            return member
    raise AssertionError("unreachable")


def hac_cluster(embeddings: Sequence[RequestEmbedding], threshold: float = DEFAULT_THRESHOLD,
                linkage: str = "average") -> ClusterSet:
    """Agglomerative clustering on log-scaled cosine similarity.

    Merges the globally most similar pair of clusters while that similarity is
    >= ``threshold``. Near-ties go to the pair whose smallest member ids are
    lexicographically lowest. Clusters are returned largest first.
    """
    if not embeddings:
        raise EmptyInput("no embeddings to cluster")
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must be in (0, 1]")
    if linkage not in _kernels.LINKAGES:
        raise ValueError(f"unknown linkage {linkage!r}")
    ordered = sorted(embeddings, key=lambda e: e.request_id)
    ids = [e.request_id for e in ordered]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate request ids")
    sim = similarity_matrix(ordered)
    labels = _kernels.hac_labels(sim, threshold, linkage)
    groups: dict[int, list[str]] = {}
    for rid, label in zip(ids, labels):
        groups.setdefault(int(label), []).append(rid)
    by_id = {e.request_id: e for e in ordered}
    member_lists = sorted(groups.values(), key=lambda ms: (-len(ms), ms[0]))
    clusters = tuple(
        Cluster(f"c{k + 1}", tuple(ms), select_representative(ms, by_id))
        for k, ms in enumerate(member_lists)
    )
    return ClusterSet(clusters, float(threshold))
