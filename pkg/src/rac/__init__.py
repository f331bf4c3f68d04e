"""Exact hierarchical agglomerative clustering, sequential and round-parallel."""

from .dendrogram import Dendrogram, MergeEvent, first_merge_difference, merge_sets_equal
from .engine import ClusterState, RoundStats, rac_run
from .graph import DissimilarityGraph
from .hac import hac_naive, hac_run
from .linkage import Linkage, check_reducibility, direct_linkage, lance_williams_update

__all__ = [
    "ClusterState",
    "Dendrogram",
    "DissimilarityGraph",
    "Linkage",
    "MergeEvent",
    "RoundStats",
    "check_reducibility",
    "direct_linkage",
    "first_merge_difference",
    "hac_naive",
    "hac_run",
    "lance_williams_update",
    "merge_sets_equal",
    "rac_run",
]
