"""Sparse weighted graph of pairwise dissimilarities.

An absent pair means "no known dissimilarity", not infinity.  Keys are
unordered (stored as (low, high)), weights are finite and non-negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass
class DissimilarityGraph:
    n: int
    edges: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("graph needs at least one node")

    def add_edge(self, u: int, v: int, w: float) -> None:
        if u == v:
            raise ValueError("self-loop on node %d" % u)
        if not (0 <= u < self.n and 0 <= v < self.n):
            raise ValueError("edge (%d, %d) outside node range 0..%d" % (u, v, self.n - 1))
        if not math.isfinite(w) or w < 0:
            raise ValueError("edge (%d, %d) has invalid weight %r" % (u, v, w))
        key = (u, v) if u < v else (v, u)
        old = self.edges.get(key)
        if old is not None and old != w:
            raise ValueError("conflicting weights for edge (%d, %d): %r vs %r" % (u, v, old, w))
        self.edges[key] = w

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def weight(self, u: int, v: int):
        return self.edges.get((u, v) if u < v else (v, u))

    def adjacency(self) -> list:
        """Per-node dict of neighbor -> weight."""
        adj = [dict() for _ in range(self.n)]
        for (u, v), w in self.edges.items():
            adj[u][v] = w
            adj[v][u] = w
        return adj

    def is_complete(self) -> bool:
        return len(self.edges) == self.n * (self.n - 1) // 2

    @classmethod
    def from_edges(cls, n: int, edges) -> "DissimilarityGraph":
        g = cls(n)
        for u, v, w in edges:
            g.add_edge(u, v, w)
        return g

    @classmethod
    def complete_from_points(cls, positions) -> "DissimilarityGraph":
        """Complete graph over 1-D positions with absolute-difference weights."""
        pts = list(positions)
        g = cls(len(pts))
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                g.add_edge(i, j, abs(pts[i] - pts[j]))
        return g

    @classmethod
    def path_from_gaps(cls, gaps) -> "DissimilarityGraph":
        """Path graph with the given consecutive-gap weights."""
        gaps = list(gaps)
        g = cls(len(gaps) + 1)
        for i, w in enumerate(gaps):
            g.add_edge(i, i + 1, w)
        return g
