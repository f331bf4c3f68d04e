"""Linkage functions and the total order used for all dissimilarity comparisons.

Cluster dissimilarities can be computed two ways: directly from the point-level
weights (``direct_linkage``) or incrementally from the two children's cached
values when clusters merge (``lance_williams_update``).  Both engines and all
oracles share the helpers here so that every code path agrees bitwise on the
values it compares.

Absent pairs on sparse graphs contribute nothing: a combine of a present and an
absent value returns the present one, and average linkage divides by the number
of point pairs that actually have an edge.
"""

from __future__ import annotations

import enum
from itertools import product

REDUCIBILITY_SLACK = 1e-12

# integer codes for hot loops
SINGLE, COMPLETE, AVERAGE = 0, 1, 2


class Linkage(enum.Enum):
    """Supported cluster-dissimilarity rules."""

    single = "single"
    complete = "complete"
    average = "average"

    @property
    def code(self) -> int:
        return _CODES[self]


_CODES = {Linkage.single: SINGLE, Linkage.complete: COMPLETE, Linkage.average: AVERAGE}


def pair_key(weight, tok_a, tok_b):
    """Total order on candidate merges: (weight, low token, high token).

    Tokens are per-cluster tie-break ids (the largest original point id in
    the cluster).  The token of a merged cluster is the max of its children's
    tokens, which keeps this order reducible: the key of (A|B, C) is never
    below the smaller of the keys of (A, C) and (B, C).  Breaking ties with
    the cluster id itself (the *min* leaf) does not have that property, and
    parallel and sequential merging can then genuinely disagree on tied
    inputs.
    """
    if tok_a < tok_b:
        return (weight, tok_a, tok_b)
    return (weight, tok_b, tok_a)


def direct_linkage(linkage: Linkage, points_a, points_b, graph):
    """Dissimilarity between two point sets, computed from base weights.

    Returns None when no cross pair has an edge.  For average linkage the
    divisor is the number of present pairs.
    """
    set_a, set_b = set(points_a), set(points_b)
    if not set_a or not set_b:
        raise ValueError("direct_linkage: point sets must be non-empty")
    if set_a & set_b:
        raise ValueError("direct_linkage: point sets overlap: %r" % sorted(set_a & set_b))
    edges = graph.edges
    code = linkage.code
    best = None
    total = 0.0
    count = 0
    for a, b in product(set_a, set_b):
        key = (a, b) if a < b else (b, a)
        w = edges.get(key)
        if w is None:
            continue
        if code == SINGLE:
            if best is None or w < best:
                best = w
        elif code == COMPLETE:
            if best is None or w > best:
                best = w
        else:
            total += w
            count += 1
    if code == AVERAGE:
        return total / count if count else None
    return best


def lance_williams_update(linkage: Linkage, w_ac, w_bc, size_a: int, size_b: int):
    """Cached dissimilarity of (A|B, C) from the children's cached values.

    ``w_ac`` / ``w_bc`` may be None (no known dissimilarity on that side); the
    present side passes through, both absent yields None.  Average linkage
    weights each side by its cluster size, exactly the textbook update.
    """
    if size_a < 1 or size_b < 1:
        raise ValueError("lance_williams_update: cluster sizes must be >= 1")
    if w_ac is None:
        return w_bc
    if w_bc is None:
        return w_ac
    code = linkage.code
    if code == SINGLE:
        return w_ac if w_ac <= w_bc else w_bc
    if code == COMPLETE:
        return w_ac if w_ac >= w_bc else w_bc
    return (size_a * w_ac + size_b * w_bc) / (size_a + size_b)


def check_reducibility(linkage: Linkage, points_a, points_b, points_c, graph) -> bool:
    """True iff W(A|B, C) >= min(W(A,C), W(B,C)) up to a small slack."""
    w_union = direct_linkage(linkage, set(points_a) | set(points_b), points_c, graph)
    w_ac = direct_linkage(linkage, points_a, points_c, graph)
    w_bc = direct_linkage(linkage, points_b, points_c, graph)
    lower = min((w for w in (w_ac, w_bc) if w is not None), default=None)
    if lower is None:
        return True
    return w_union >= lower - REDUCIBILITY_SLACK


# ---------------------------------------------------------------------------
# Neighbor-map aggregates.
#
# Engines keep one aggregate per known cluster pair.  Single and complete
# linkage need only the weight itself; min/max combines are associative, so
# the cached value is a pure function of the two clusters' point sets no
# matter what order merges happened in.  For average linkage the aggregate is
# (weight sum, pair count) over present base pairs, which is associative too
# and reduces to the size-weighted update on complete graphs.  Carrying the
# plain weight through the size-weighted formula instead is NOT order
# independent once absent pairs appear, and the parallel engine then cannot
# reproduce the sequential merge set; see tests/test_engine.py.
# ---------------------------------------------------------------------------


def edge_agg(code: int, w: float):
    """Aggregate for a single base edge."""
    if code == AVERAGE:
        return (w, 1)
    return w


def combine_agg(code: int, e1, e2):
    """Combine two pair aggregates; either side may be None."""
    if e1 is None:
        return e2
    if e2 is None:
        return e1
    if code == SINGLE:
        return e1 if e1 <= e2 else e2
    if code == COMPLETE:
        return e1 if e1 >= e2 else e2
    return (e1[0] + e2[0], e1[1] + e2[1])


def agg_value(code: int, e) -> float:
    """Comparison weight of an aggregate."""
    if code == AVERAGE:
        return e[0] / e[1]
    return e
