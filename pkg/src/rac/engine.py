"""Round-based clustering: merge every reciprocal nearest-neighbor pair at once.

Each round has three barrier-separated phases:

1. find: every cluster checks whether its nearest neighbor points back at it;
   each such pair is claimed by its lower-id member.
2. merge: pair owners build the union's neighbor map from both children,
   reading only pre-round state; results, deletions and symmetric pushes are
   staged and applied in one deterministic sweep.
3. update nearest neighbors: clusters that merged, or whose cached nearest
   neighbor merged, rescan their neighbor map.

When two merging pairs neighbor each other, both owners compute the new
cross dissimilarity independently from the same four cached values, folded
in a canonical order so the two results are bitwise identical.

Worker threads split each phase over disjoint cluster-id ranges; no worker
writes another worker's cluster, and cross-partition effects (symmetric
pushes, deletions) are buffered and applied between phases in sorted order,
so output is identical for any worker count.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .dendrogram import Dendrogram, MergeEvent
from .graph import DissimilarityGraph
from .linkage import (
    AVERAGE,
    Linkage,
    agg_value,
    combine_agg,
    edge_agg,
    lance_williams_update,
    pair_key,
)


@dataclass(slots=True)
class ClusterState:
    """Live per-cluster record owned by an engine during a run."""

    id: int
    size: int
    tok: int
    neighbors: dict
    nn: int | None = None
    will_merge: bool = False


@dataclass(slots=True)
class RoundStats:
    round: int
    clusters_before: int
    merges: int
    alpha: float
    nn_updates: int
    beta_per_merge: float
    find_rnn_time: float = 0.0
    merge_time: float = 0.0
    nn_update_time: float = 0.0

    def record(self) -> dict:
        """Deterministic fields only, for stats files."""
        return {
            "round": self.round,
            "clusters_before": self.clusters_before,
            "merges": self.merges,
            "alpha": self.alpha,
            "nn_updates": self.nn_updates,
            "beta_per_merge": self.beta_per_merge,
        }


def build_cluster_states(g: DissimilarityGraph, linkage: Linkage,
                         average_mode: str = "counts") -> dict:
    """Singleton clusters with initial neighbor aggregates and nn caches."""
    code = linkage.code
    sizes_mode = code == AVERAGE and average_mode == "sizes"
    clusters = {i: ClusterState(i, 1, i, {}) for i in range(g.n)}
    for (u, v), w in g.edges.items():
        agg = w if sizes_mode else edge_agg(code, w)
        clusters[u].neighbors[v] = agg
        clusters[v].neighbors[u] = agg
    for c in clusters.values():
        c.nn = _best_neighbor(clusters, c, code, sizes_mode)
    return clusters


def _best_neighbor(clusters, c, code, sizes_mode):
    best = None
    best_key = None
    for x, agg in c.neighbors.items():
        w = agg if sizes_mode else agg_value(code, agg)
        key = (w, clusters[x].tok)
        if best_key is None or key < best_key:
            best_key = key
            best = x
    return best


# ---------------------------------------------------------------------------
# Phase cores.  Each takes the subset of work it should do and never mutates
# anything outside that subset; mutations that cross cluster boundaries are
# returned for the caller to apply after the barrier.
# ---------------------------------------------------------------------------


def _find_core(clusters, ids):
    """Set will_merge for `ids`; return pairs owned by a member of `ids`."""
    pairs = []
    for cid in ids:
        c = clusters[cid]
        nn = c.nn
        c.will_merge = wm = nn is not None and clusters[nn].nn == cid
        if wm and cid < nn:
            pairs.append((cid, nn))
    return pairs


def _pair_pair_agg(code, quads):
    """Fold the cross aggregates of two merging pairs in canonical label order.

    `quads` holds ((low member, high member), aggregate) for each of the up
    to four member-to-member entries; both owners build the same labels, so
    both fold identically.
    """
    agg = None
    for _, q in sorted(quads, key=lambda t: t[0]):
        agg = combine_agg(code, agg, q)
    return agg


def _merge_core(clusters, pairs, linkage, average_mode):
    """Compute staged results for `pairs`, reading only pre-round state.

    Returns (staged, pushes, events) where staged maps owner id to its new
    (size, tok, neighbor map), pushes are symmetric updates for non-merging
    neighbors, and events are (owner, partner, weight, size) merge records.
    """
    code = linkage.code
    sizes_mode = code == AVERAGE and average_mode == "sizes"
    staged = {}
    pushes = []
    events = []
    for a, b in pairs:
        ca, cb = clusters[a], clusters[b]
        sa, sb = ca.size, cb.size
        na, nb = ca.neighbors, cb.neighbors
        w_pair = na[b] if sizes_mode else agg_value(code, na[b])
        new = {}
        for x in na.keys() | nb.keys():
            if x == a or x == b:
                continue
            cx = clusters[x]
            if cx.will_merge:
                p = cx.nn
                q_lo = x if x < p else p
                if q_lo in new:
                    continue  # reached through the pair's other member
                q_hi = x ^ p ^ q_lo
                if sizes_mode:
                    agg = _sizes_mode_pair_pair(
                        clusters, code, a, b, q_lo, q_hi, sa, sb, w_pair
                    )
                else:
                    quads = []
                    for pm, pn in ((a, na), (b, nb)):
                        for qm in (q_lo, q_hi):
                            e = pn.get(qm)
                            if e is not None:
                                quads.append(((pm, qm) if pm < qm else (qm, pm), e))
                    agg = _pair_pair_agg(code, quads)
                new[q_lo] = agg
            else:
                e1, e2 = na.get(x), nb.get(x)
                if sizes_mode and e1 is not None and e2 is not None:
                    agg = (sa * e1 + sb * e2) / (sa + sb)
                else:
                    agg = combine_agg(code, e1, e2)
                new[x] = agg
                pushes.append((x, a, b, agg))
        tok = ca.tok if ca.tok > cb.tok else cb.tok
        staged[a] = (sa + sb, tok, new, b)
        events.append((a, b, w_pair, sa + sb))
    return staged, pushes, events


def _sizes_mode_pair_pair(clusters, code, a, b, q_lo, q_hi, sa, sb, w_pair):
    """Size-weighted cross value of two merging pairs, nesting by merge key.

    Folds the pair that the sequential algorithm would merge first (smaller
    (weight, token) key) on the inside, reproducing its arithmetic exactly.
    """
    ca, cb = clusters[a], clusters[b]
    cl, ch = clusters[q_lo], clusters[q_hi]
    w_q = cl.neighbors[q_hi]
    key_p = pair_key(w_pair, ca.tok, cb.tok)
    key_q = pair_key(w_q, cl.tok, ch.tok)
    linkage = _LINKAGE_BY_CODE[code]
    if key_p < key_q:
        u_lo = lance_williams_update(linkage, ca.neighbors.get(q_lo), cb.neighbors.get(q_lo), sa, sb)
        u_hi = lance_williams_update(linkage, ca.neighbors.get(q_hi), cb.neighbors.get(q_hi), sa, sb)
        return lance_williams_update(linkage, u_lo, u_hi, cl.size, ch.size)
    v_a = lance_williams_update(linkage, cl.neighbors.get(a), ch.neighbors.get(a), cl.size, ch.size)
    v_b = lance_williams_update(linkage, cl.neighbors.get(b), ch.neighbors.get(b), cl.size, ch.size)
    return lance_williams_update(linkage, v_a, v_b, sa, sb)


_LINKAGE_BY_CODE = {lk.code: lk for lk in Linkage}


def _apply_merges(clusters, staged, pushes):
    """Apply staged merge results, deletions and symmetric pushes in id order."""
    for a in sorted(staged):
        size, tok, new, b = staged[a]
        ca = clusters[a]
        ca.size = size
        ca.tok = tok
        ca.neighbors = new
        del clusters[b]
    for x, a, b, agg in sorted(pushes, key=lambda t: (t[0], t[1])):
        nx = clusters[x].neighbors
        nx.pop(b, None)
        nx[a] = agg


def _rescan_core(clusters, ids, code, sizes_mode):
    """Recompute nn where needed; returns rescan count.  Clears merge flags."""
    updates = 0
    for cid in ids:
        c = clusters[cid]
        nn = c.nn
        if c.will_merge or (nn is not None and (nn not in clusters or clusters[nn].will_merge)):
            c.nn = _best_neighbor(clusters, c, code, sizes_mode)
            updates += 1
    return updates


def _clear_flags(clusters, ids):
    for cid in ids:
        clusters[cid].will_merge = False


# ---------------------------------------------------------------------------
# Module-level forms of the three phases, for direct use and tests.
# ---------------------------------------------------------------------------


def find_reciprocal_nearest_neighbors(clusters) -> list:
    """All reciprocal nearest-neighbor pairs, each keyed by its lower id."""
    return _find_core(clusters, sorted(clusters))


def update_cluster_dissimilarities(clusters, pairs, linkage: Linkage,
                                   average_mode: str = "counts") -> None:
    """Merge the given pairs and restore symmetric neighbor maps."""
    staged, pushes, _ = _merge_core(clusters, pairs, linkage, average_mode)
    _apply_merges(clusters, staged, pushes)
    asymmetry = check_symmetry(clusters, linkage, average_mode)
    if asymmetry is not None:
        raise AssertionError("neighbor maps asymmetric after merge phase: %r" % (asymmetry,))


def update_nearest_neighbors(clusters, linkage: Linkage,
                             average_mode: str = "counts") -> int:
    """Rescan nearest neighbors after a merge phase; returns rescan count."""
    code = linkage.code
    sizes_mode = code == AVERAGE and average_mode == "sizes"
    ids = sorted(clusters)
    updates = _rescan_core(clusters, ids, code, sizes_mode)
    _clear_flags(clusters, ids)
    return updates


def check_symmetry(clusters, linkage: Linkage, average_mode: str = "counts"):
    """Return a description of the first asymmetric neighbor entry, or None."""
    for cid, c in clusters.items():
        for x, agg in c.neighbors.items():
            other = clusters.get(x)
            if other is None:
                return (cid, x, "dangling")
            back = other.neighbors.get(cid)
            if back != agg:
                return (cid, x, agg, back)
    return None


# ---------------------------------------------------------------------------
# The round loop.
# ---------------------------------------------------------------------------


def _chunks(items, n):
    if n <= 1 or len(items) <= 1:
        return [items]
    step = (len(items) + n - 1) // n
    return [items[i:i + step] for i in range(0, len(items), step)]


def rac_run(g: DissimilarityGraph, linkage: Linkage, workers: int = 1,
            average_mode: str = "counts", check_invariants: bool = False):
    """Cluster a graph by rounds of parallel reciprocal-pair merges.

    Returns (dendrogram, per-round stats).  The merge set matches hac_run;
    merges carry the round they happened in.  Stops when a round finds no
    reciprocal pair, which covers disconnected inputs.

    ``check_invariants`` re-verifies neighbor-map symmetry after every merge
    phase and every nn cache after every round (slow; for tests and debug).
    """
    code = linkage.code
    sizes_mode = code == AVERAGE and average_mode == "sizes"
    clusters = build_cluster_states(g, linkage, average_mode)
    merges = []
    stats = []
    round_idx = 0
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    def run_parts(fn, parts):
        if pool is None or len(parts) == 1:
            return [fn(part) for part in parts]
        return list(pool.map(fn, parts))

    try:
        while True:
            t0 = time.perf_counter()
            ids = sorted(clusters)
            pairs = []
            for part in run_parts(lambda part: _find_core(clusters, part), _chunks(ids, workers)):
                pairs.extend(part)
            pairs.sort()
            t1 = time.perf_counter()
            if not pairs:
                break
            round_idx += 1
            clusters_before = len(clusters)

            staged = {}
            pushes = []
            events = []
            for st, pu, ev in run_parts(
                lambda part: _merge_core(clusters, part, linkage, average_mode),
                _chunks(pairs, workers),
            ):
                staged.update(st)
                pushes.extend(pu)
                events.extend(ev)
            _apply_merges(clusters, staged, pushes)
            if check_invariants:
                asymmetry = check_symmetry(clusters, linkage, average_mode)
                if asymmetry is not None:
                    raise AssertionError(
                        "round %d: asymmetric neighbor maps after merge phase: %r"
                        % (round_idx, asymmetry)
                    )
            for a, b, w, size in sorted(events):
                merges.append(MergeEvent.make(a, b, w, round_idx, size))
            t2 = time.perf_counter()

            survivors = sorted(clusters)
            counts = run_parts(
                lambda part: _rescan_core(clusters, part, code, sizes_mode),
                _chunks(survivors, workers),
            )
            run_parts(lambda part: _clear_flags(clusters, part), _chunks(survivors, workers))
            nn_updates = sum(counts)
            if check_invariants:
                for cid in survivors:
                    c = clusters[cid]
                    if c.nn != _best_neighbor(clusters, c, code, sizes_mode):
                        raise AssertionError(
                            "round %d: stale nearest-neighbor cache on cluster %d"
                            % (round_idx, cid)
                        )
            t3 = time.perf_counter()

            n_merges = len(events)
            stats.append(RoundStats(
                round=round_idx,
                clusters_before=clusters_before,
                merges=n_merges,
                alpha=2.0 * n_merges / clusters_before,
                nn_updates=nn_updates,
                beta_per_merge=nn_updates / n_merges if n_merges else 0.0,
                find_rnn_time=t1 - t0,
                merge_time=t2 - t1,
                nn_update_time=t3 - t2,
            ))
    finally:
        if pool is not None:
            pool.shutdown(wait=False)
    return Dendrogram(g.n, merges), stats
