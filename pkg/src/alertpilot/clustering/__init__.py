"""Request embedding, log-scaled cosine similarity and agglomerative clustering."""

from ._kernels import backend, set_backend
from .core import (
    DEFAULT_THRESHOLD,
    Cluster,
    ClusterSet,
    EventVocabulary,
    RequestEmbedding,
    build_vocabulary,
    embed_request,
    hac_cluster,
    select_representative,
    similarity,
    similarity_matrix,
)

__all__ = [
    "DEFAULT_THRESHOLD", "Cluster", "ClusterSet", "EventVocabulary", "RequestEmbedding",
    "backend", "build_vocabulary", "embed_request", "hac_cluster", "select_representative",
    "set_backend", "similarity", "similarity_matrix",
]
