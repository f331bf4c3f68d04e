"""File formats and graph construction.

Edge lists are one `u<TAB>v<TAB>w` line per edge with `#` comments; vector
files are `id<TAB>c1,c2,...,cd` with ids covering 0..n-1 in any order.
Dendrogram files carry a `#rac-dendrogram v1 n=<n>` header and one
tab-separated line per merge with the dissimilarity printed to 17
significant digits, so a write/read round trip is the identity.

Nearest-neighbor graphs are built by exact brute force: at desk scale an
exact graph keeps the oracle chain trustworthy, and approximate indexes are
out of scope.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .dendrogram import Dendrogram, MergeEvent
from .graph import DissimilarityGraph

METRICS = ("l2", "cosine")

_BLOCK = 512  # rows per distance block; bounds peak memory at n * _BLOCK floats


@dataclass
class PointSet:
    vectors: np.ndarray
    metric: str = "l2"

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise ValueError("vectors must be a 2-D array, got shape %r" % (self.vectors.shape,))
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("vectors contain non-finite coordinates")
        if self.metric not in METRICS:
            raise ValueError("unknown metric %r (expected one of %r)" % (self.metric, METRICS))
        if self.metric == "cosine":
            norms = np.linalg.norm(self.vectors, axis=1)
            bad = np.nonzero(norms == 0.0)[0]
            if bad.size:
                raise ValueError("cosine metric undefined for zero vector (point %d)" % bad[0])

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def distance_block(self, rows) -> np.ndarray:
        """Distances from the given rows to every point."""
        sel = self.selection_block(rows)
        return np.sqrt(sel) if self.metric == "l2" else sel

    def selection_block(self, rows, dtype=np.float64) -> np.ndarray:
        """Monotone stand-in for distances (squared l2), cheap to rank on."""
        vectors = self.vectors.astype(dtype, copy=False) if dtype != np.float64 else self.vectors
        x = vectors[rows]
        if self.metric == "l2":
            norms = (vectors * vectors).sum(axis=1)
            d2 = x @ vectors.T
            d2 *= -2.0
            d2 += norms[rows][:, None]
            d2 += norms[None, :]
            np.maximum(d2, 0.0, out=d2)
            return d2
        norms = np.sqrt((vectors * vectors).sum(axis=1))
        sim = x @ vectors.T
        sim /= norms[rows][:, None]
        sim /= norms[None, :]
        out = 1.0 - sim
        return np.clip(out, 0.0, 2.0, out=out)

    def picked_distances(self, rows, picks) -> np.ndarray:
        """Exact double-precision distances from rows[r] to picks[r, :]."""
        x = self.vectors[rows]
        chosen = self.vectors[picks]
        if self.metric == "l2":
            diff = x[:, None, :] - chosen
            return np.sqrt((diff * diff).sum(axis=2))
        sim = np.einsum("rd,rkd->rk", x, chosen)
        sim /= np.linalg.norm(x, axis=1)[:, None]
        sim /= np.linalg.norm(chosen, axis=2)
        return np.clip(1.0 - sim, 0.0, 2.0)


# ---------------------------------------------------------------------------
# Loaders.
# ---------------------------------------------------------------------------


def _format_error(path, lineno, why):
    return ValueError("%s:%d: %s" % (path, lineno, why))


def load_edge_list(path) -> DissimilarityGraph:
    """Parse a tab-separated edge list into a symmetric graph.

    Repeated pairs with equal weight collapse to one edge; a repeated pair
    with a different weight is an error naming the offending line.
    """
    edges = {}
    first_line = {}
    max_id = -1
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise _format_error(path, lineno, "expected u<TAB>v<TAB>w, got %r" % line)
            try:
                u, v = int(parts[0]), int(parts[1])
                w = float(parts[2])
            except ValueError:
                raise _format_error(path, lineno, "non-numeric field in %r" % line) from None
            if u < 0 or v < 0:
                raise _format_error(path, lineno, "negative node id in %r" % line)
            if u == v:
                raise _format_error(path, lineno, "self-loop on node %d" % u)
            if not math.isfinite(w) or w < 0:
                raise _format_error(path, lineno, "invalid weight %r" % parts[2])
            key = (u, v) if u < v else (v, u)
            old = edges.get(key)
            if old is not None and old != w:
                raise _format_error(
                    path, lineno,
                    "edge (%d, %d) already has weight %r from line %d"
                    % (u, v, old, first_line[key]),
                )
            if old is None:
                edges[key] = w
                first_line[key] = lineno
            max_id = max(max_id, u, v)
    if max_id < 0:
        raise ValueError("%s: no edges found" % path)
    g = DissimilarityGraph(max_id + 1)
    g.edges = edges
    return g


def write_edge_list(g: DissimilarityGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for (u, v) in sorted(g.edges):
            fh.write("%d\t%d\t%.17g\n" % (u, v, g.edges[(u, v)]))


def load_vectors(path, metric: str = "l2") -> PointSet:
    """Parse an `id<TAB>c1,c2,...` vector file; ids must cover 0..n-1."""
    rows = {}
    dim = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise _format_error(path, lineno, "expected id<TAB>coords, got %r" % line)
            try:
                idx = int(parts[0])
                coords = [float(c) for c in parts[1].split(",")]
            except ValueError:
                raise _format_error(path, lineno, "non-numeric field in %r" % line) from None
            if idx in rows:
                raise _format_error(path, lineno, "duplicate point id %d" % idx)
            if dim is None:
                dim = len(coords)
            elif len(coords) != dim:
                raise _format_error(
                    path, lineno, "dimension %d != %d of earlier points" % (len(coords), dim)
                )
            rows[idx] = coords
    if not rows:
        raise ValueError("%s: no points found" % path)
    n = len(rows)
    if sorted(rows) != list(range(n)):
        raise ValueError("%s: point ids must be exactly 0..%d" % (path, n - 1))
    return PointSet(np.array([rows[i] for i in range(n)]), metric)


def write_vectors(p: PointSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(p.n):
            fh.write("%d\t%s\n" % (i, ",".join("%.17g" % c for c in p.vectors[i])))


# ---------------------------------------------------------------------------
# Graph construction.
# ---------------------------------------------------------------------------


def build_knn_graph(p: PointSet, k: int) -> DissimilarityGraph:
    """Graph of each point's k nearest others, symmetrized by union.

    Ties are broken toward the lower id.  Every node ends with degree at
    most 2k: its own k out-edges plus at most k picks by others.
    """
    n = p.n
    if not 1 <= k < n:
        raise ValueError("k must be in [1, n-1], got k=%d with n=%d" % (k, n))
    edges = {}
    exact = n <= 4096
    for start in range(0, n, _BLOCK):
        rows = range(start, min(start + _BLOCK, n))
        if exact:
            dist = p.distance_block(rows)
            dist[np.arange(len(rows)), np.arange(start, start + len(rows))] = np.inf
            picks = np.argsort(dist, axis=1, kind="stable")[:, :k]
            weights = np.take_along_axis(dist, picks, axis=1)
        else:
            # rank on single-precision squared distances, then coarse cut by
            # rank with exact (value, id) order inside it; final weights in
            # double from the picked pairs
            sel = p.selection_block(rows, dtype=np.float32)
            sel[np.arange(len(rows)), np.arange(start, start + len(rows))] = np.inf
            width = min(k + 16, n - 1)
            cand = np.argpartition(sel, width, axis=1)[:, : width + 1]
            cd = np.take_along_axis(sel, cand, axis=1)
            order = np.lexsort((cand, cd), axis=1)
            picks = np.take_along_axis(cand, order, axis=1)[:, :k]
            weights = p.picked_distances(rows, picks)
        for off, i in enumerate(rows):
            prow = picks[off]
            wrow = weights[off]
            for t in range(k):
                j = int(prow[t])
                key = (i, j) if i < j else (j, i)
                if key not in edges:
                    edges[key] = float(wrow[t])
    g = DissimilarityGraph(n)
    g.edges = edges
    return g


def build_epsilon_graph(p: PointSet, eps: float) -> DissimilarityGraph:
    """Graph of every pair within distance eps."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    n = p.n
    edges = {}
    for start in range(0, n, _BLOCK):
        rows = range(start, min(start + _BLOCK, n))
        dist = p.distance_block(rows)
        for off, i in enumerate(rows):
            drow = dist[off]
            close = np.nonzero(drow[i + 1:] <= eps)[0]
            for j in close:
                edges[(i, i + 1 + int(j))] = float(drow[i + 1 + int(j)])
    g = DissimilarityGraph(n)
    g.edges = edges
    return g


# ---------------------------------------------------------------------------
# Dendrogram and stats serialization.
# ---------------------------------------------------------------------------

_DENDRO_HEADER = "#rac-dendrogram v1 n=%d"


def write_dendrogram(d: Dendrogram, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_DENDRO_HEADER % d.n_points + "\n")
        for seq, m in enumerate(d.merges, start=1):
            fh.write(
                "%d\t%d\t%d\t%d\t%d\t%.17g\t%d\n"
                % (seq, m.round, m.left, m.right, m.result, m.dissimilarity, m.result_size)
            )


def read_dendrogram(path) -> Dendrogram:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("#rac-dendrogram v1 n="):
            raise ValueError("%s: not a dendrogram file (header %r)" % (path, header))
        try:
            n = int(header.rsplit("=", 1)[1])
        except ValueError:
            raise ValueError("%s: bad point count in header %r" % (path, header)) from None
        merges = []
        for lineno, raw in enumerate(fh, start=2):
            line = raw.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 7:
                raise _format_error(path, lineno, "expected 7 fields, got %d" % len(parts))
            _, rnd, left, right, result, diss, size = parts
            ev = MergeEvent(int(left), int(right), int(result), float(diss), int(rnd), int(size))
            merges.append(ev)
    d = Dendrogram(n, merges)
    d.validate()
    return d


def write_records(records, path) -> None:
    """One JSON object per line, keys sorted, byte-stable for equal inputs."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_records(path) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def round_records(round_stats, transport_stats=None) -> list:
    """Stats-file records for a run: per-round counters, no wall times.

    Wall times vary run to run and would break byte-identical outputs; they
    are reported on stdout instead.
    """
    out = []
    by_round = {}
    if transport_stats is not None:
        by_round = {r["round"]: r for r in transport_stats.rounds}
    for rs in round_stats:
        rec = rs.record()
        extra = by_round.get(rs.round)
        if extra is not None:
            rec["messages"] = extra["messages"]
            rec["message_bytes"] = extra["bytes"]
        out.append(rec)
    return out
