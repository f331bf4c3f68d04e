"""Sequential agglomerative clustering: the ground-truth oracle.

``hac_run`` repeatedly merges the globally closest pair under the shared
total order, maintaining cached pair aggregates.  ``hac_naive`` recomputes
every cluster dissimilarity from the point-level definition at each step and
must produce the identical merge set; it exists purely to cross-check the
cached-update machinery and is capped at small instance sizes.

The priority queue holds stale entries and validates on pop: an entry is
acted on only if both clusters are still alive and the stored weight and
tie tokens match the pair's current state.
"""

from __future__ import annotations

import heapq

from .dendrogram import Dendrogram, MergeEvent
from .graph import DissimilarityGraph
from .linkage import (
    AVERAGE,
    SINGLE,
    Linkage,
    agg_value,
    combine_agg,
    edge_agg,
    lance_williams_update,
)

NAIVE_MAX_POINTS = 512


def initial_clusters(g: DissimilarityGraph, linkage: Linkage, average_mode: str = "counts"):
    """Singleton cluster state (size, token, neighbor-aggregate dicts)."""
    code = linkage.code
    sizes_mode = code == AVERAGE and average_mode == "sizes"
    size = {i: 1 for i in range(g.n)}
    tok = {i: i for i in range(g.n)}
    nbrs = {i: {} for i in range(g.n)}
    for (u, v), w in g.edges.items():
        agg = w if sizes_mode else edge_agg(code, w)
        nbrs[u][v] = agg
        nbrs[v][u] = agg
    return size, tok, nbrs


def contract_pair(state, a: int, b: int, linkage: Linkage, average_mode: str = "counts"):
    """Merge clusters a and b in place; returns the result's new pair entries.

    The surviving cluster is min(a, b).  Used by the run loop and directly by
    tests that pre-merge a pair by hand.
    """
    size, tok, nbrs = state
    code = linkage.code
    sizes_mode = code == AVERAGE and average_mode == "sizes"
    if a > b:
        a, b = b, a
    nb_a = nbrs[a]
    nb_b = nbrs.pop(b)
    nb_a.pop(b, None)
    nb_b.pop(a, None)
    sa, sb = size[a], size[b]
    new_tok = tok[a] if tok[a] > tok[b] else tok[b]
    merged = {}
    for x in nb_a.keys() | nb_b.keys():
        e1 = nb_a.get(x)
        e2 = nb_b.get(x)
        if sizes_mode and e1 is not None and e2 is not None:
            agg = (sa * e1 + sb * e2) / (sa + sb)
        else:
            agg = combine_agg(code, e1, e2)
        merged[x] = agg
        nx = nbrs[x]
        nx.pop(b, None)
        nx[a] = agg
    nbrs[a] = merged
    size[a] = sa + sb
    tok[a] = new_tok
    del size[b], tok[b]
    return merged


def run_from_state(state, linkage: Linkage, n_points: int, average_mode: str = "counts",
                   merges=None, start_round: int = 1) -> Dendrogram:
    """Run the sequential merge loop from a prepared cluster state."""
    size, tok, nbrs = state
    code = linkage.code
    sizes_mode = code == AVERAGE and average_mode == "sizes"
    heap = []
    for a, na in nbrs.items():
        ta = tok[a]
        for b, agg in na.items():
            if a < b:
                w = agg if sizes_mode else agg_value(code, agg)
                tb = tok[b]
                t1, t2 = (ta, tb) if ta < tb else (tb, ta)
                heap.append((w, t1, t2, a, b))
    heapq.heapify(heap)
    merges = [] if merges is None else merges
    round_idx = start_round
    while heap:
        w, t1, t2, a, b = heapq.heappop(heap)
        na = nbrs.get(a)
        if na is None or b not in nbrs:
            continue
        agg = na.get(b)
        if agg is None:
            continue
        cur = agg if sizes_mode else agg_value(code, agg)
        ta, tb = tok[a], tok[b]
        c1, c2 = (ta, tb) if ta < tb else (tb, ta)
        if cur != w or c1 != t1 or c2 != t2:
            continue  # stale entry
        new_entries = contract_pair(state, a, b, linkage, average_mode)
        merges.append(MergeEvent.make(a, b, w, round_idx, size[a]))
        round_idx += 1
        ta = tok[a]
        for x, agg in new_entries.items():
            wx = agg if sizes_mode else agg_value(code, agg)
            tx = tok[x]
            t1, t2 = (ta, tx) if ta < tx else (tx, ta)
            lo, hi = (a, x) if a < x else (x, a)
            heapq.heappush(heap, (wx, t1, t2, lo, hi))
    return Dendrogram(n_points, merges)


def hac_run(g: DissimilarityGraph, linkage: Linkage, average_mode: str = "counts") -> Dendrogram:
    """Exact sequential clustering of a dissimilarity graph.

    Disconnected inputs stop when no pair has a defined dissimilarity and
    yield one tree per component.  Each merge's round is its step index.
    """
    state = initial_clusters(g, linkage, average_mode)
    return run_from_state(state, linkage, g.n, average_mode)


def hac_naive(g: DissimilarityGraph, linkage: Linkage, compare_lw: bool = False) -> Dendrogram:
    """Reference clustering that recomputes dissimilarities from the definition.

    No cached pair updates: when a merge happens, every pair involving the
    new cluster is recomputed from the base edges over the clusters' leaves.
    With ``compare_lw`` (complete graphs only) the size-weighted update
    formula is evaluated alongside and checked against the recomputed value
    to 1e-9 relative.
    """
    if g.n > NAIVE_MAX_POINTS:
        raise ValueError(
            "hac_naive is quadratic per step; refusing n=%d > %d" % (g.n, NAIVE_MAX_POINTS)
        )
    if compare_lw and not g.is_complete():
        raise ValueError("compare_lw needs a complete graph: the size-weighted "
                         "formula only matches the definition when every pair is present")
    code = linkage.code
    edges = g.edges
    leaves = {i: [i] for i in range(g.n)}
    tok = {i: i for i in range(g.n)}
    size = {i: 1 for i in range(g.n)}

    def definition(ca: int, cb: int):
        best = None
        total = 0.0
        count = 0
        for p in leaves[ca]:
            for q in leaves[cb]:
                w = edges.get((p, q) if p < q else (q, p))
                if w is None:
                    continue
                if code == AVERAGE:
                    total += w
                    count += 1
                elif best is None or (w < best if code == SINGLE else w > best):
                    best = w
        if code == AVERAGE:
            return total / count if count else None
        return best

    value = {}
    lw_cache = {}
    ids = sorted(leaves)
    for i, ca in enumerate(ids):
        for cb in ids[i + 1:]:
            w = definition(ca, cb)
            if w is not None:
                value[(ca, cb)] = w
                if compare_lw:
                    lw_cache[(ca, cb)] = w
    merges = []
    step = 0
    while value:
        best_key = None
        best_pair = None
        for (ca, cb), w in value.items():
            ta, tb = tok[ca], tok[cb]
            key = (w, ta, tb) if ta < tb else (w, tb, ta)
            if best_key is None or key < best_key:
                best_key = key
                best_pair = (ca, cb)
        a, b = best_pair
        step += 1
        merges.append(MergeEvent.make(a, b, best_key[0], step, size[a] + size[b]))
        if compare_lw:
            for c in leaves:
                if c in (a, b):
                    continue
                w_ac = lw_cache.get((a, c) if a < c else (c, a))
                w_bc = lw_cache.get((b, c) if b < c else (c, b))
                lw_cache[(a, c) if a < c else (c, a)] = lance_williams_update(
                    linkage, w_ac, w_bc, size[a], size[b]
                )
        leaves[a].extend(leaves[b])
        size[a] += size[b]
        tok[a] = max(tok[a], tok[b])
        del leaves[b], size[b], tok[b]
        for key in [k for k in value if b in k or a in k]:
            del value[key]
            if compare_lw and b in key:
                lw_cache.pop(key, None)
        for c in leaves:
            if c == a:
                continue
            w = definition(a, c)
            if w is not None:
                pair = (a, c) if a < c else (c, a)
                value[pair] = w
                if compare_lw:
                    cached = lw_cache[pair]
                    if abs(cached - w) > 1e-9 * max(1.0, abs(w)):
                        raise AssertionError(
                            "cached update %r drifted from definition %r for pair %r"
                            % (cached, w, pair)
                        )
    return Dendrogram(g.n, merges)
