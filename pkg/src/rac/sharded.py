"""Sharded execution of the merge-round loop with batched message passing.

Clusters live on ``id mod num_shards``; a merged pair keeps its lower id and
therefore its shard.  Shards never touch each other's state: every remote
read or write rides a Message, and messages are only delivered when a phase
flushes, so no shard ever observes another shard mid-phase.

Per round the wire traffic is:

* find: NNQuery/NNReply resolve "is my nearest neighbor's nearest neighbor
  me?" for clusters whose nn lives remotely.
* merge: one NeighborhoodRequest/Reply per pair whose higher member is
  remote (the owner pulls the partner's full neighborhood, the partner's
  shard then just deletes it); NNQuery/NNReply again, this round asking
  union neighbors whether they merge too and with whom; DissimilarityUpdate
  pushes the recomputed dissimilarity to each remote non-merging neighbor;
  DeleteNotice tells a remote higher member's shard to drop it.
* update nearest neighbors: purely local, driven by flags raised while
  applying updates.

Neighbor maps mirror each neighbor's (aggregate, size, token) so nearest-
neighbor scans and size-weighted merges never need an extra round trip.

Payload bytes are modeled as 8 per id/token, 8 per weight, 8 per size or
count, 1 per kind tag, independent of the host encoding.
"""

from __future__ import annotations

import enum
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

from .dendrogram import Dendrogram, MergeEvent
from .engine import RoundStats
from .graph import DissimilarityGraph
from .linkage import AVERAGE, Linkage, agg_value, combine_agg, edge_agg


class MessageKind(enum.Enum):
    NN_QUERY = "NNQuery"
    NN_REPLY = "NNReply"
    NEIGHBORHOOD_REQUEST = "NeighborhoodRequest"
    NEIGHBORHOOD_REPLY = "NeighborhoodReply"
    DISSIMILARITY_UPDATE = "DissimilarityUpdate"
    DELETE_NOTICE = "DeleteNotice"


class Message(NamedTuple):
    kind: MessageKind
    src: int
    dst: int
    payload: tuple
    nbytes: int


@dataclass(frozen=True)
class ShardAssignment:
    num_shards: int

    def shard_of(self, cluster_id: int) -> int:
        return cluster_id % self.num_shards


def assign_shard(cluster_id: int, num_shards: int) -> int:
    """Home shard of a cluster id."""
    if num_shards < 1:
        raise ValueError("need at least one shard")
    return cluster_id % num_shards


def _agg_bytes(code: int) -> int:
    return 16 if code == AVERAGE else 8


def _msg_bytes(kind: MessageKind, payload, code: int) -> int:
    if kind is MessageKind.NN_QUERY:
        return 1 + 16
    if kind is MessageKind.NN_REPLY:
        return 1 + 24 if len(payload) == 3 else 1 + 40
    if kind is MessageKind.NEIGHBORHOOD_REQUEST:
        return 1 + 16
    if kind is MessageKind.NEIGHBORHOOD_REPLY:
        return 1 + 32 + len(payload[4]) * (24 + _agg_bytes(code))
    if kind is MessageKind.DISSIMILARITY_UPDATE:
        return 1 + 40 + _agg_bytes(code)
    if kind is MessageKind.DELETE_NOTICE:
        return 1 + 8
    raise ValueError(kind)


@dataclass
class TransportStats:
    """Per-round message counts, payload bytes and per-shard phase times."""

    rounds: list = field(default_factory=list)
    log: list | None = None

    def total_messages(self) -> Counter:
        total = Counter()
        for r in self.rounds:
            total.update(r["messages"])
        return total

    def total_bytes(self) -> int:
        return sum(r["bytes"] for r in self.rounds)


class Transport:
    """In-memory batched message fabric with byte accounting."""

    def __init__(self, num_shards: int, code: int, keep_log: bool = False):
        self.num_shards = num_shards
        self.code = code
        self.outboxes = [[] for _ in range(num_shards)]
        self.round_counts = Counter()
        self.round_bytes = 0
        self.log = [] if keep_log else None
        self.round = 0
        self.requests_in_flight = 0

    def send(self, kind: MessageKind, src: int, dst: int, payload: tuple) -> None:
        # shard tasks may run concurrently; each writes only its own outbox,
        # so all shared accounting happens in the single-threaded flush
        nbytes = _msg_bytes(kind, payload, self.code)
        self.outboxes[src].append(Message(kind, src, dst, payload, nbytes))

    def flush(self, phase: str) -> list:
        """Deliver all pending batches; returns one inbox list per shard."""
        inboxes = [[] for _ in range(self.num_shards)]
        for src in range(self.num_shards):
            batch = self.outboxes[src]
            if not batch:
                continue
            grouped = {}
            for m in batch:
                self.round_counts[m.kind.value] += 1
                self.round_bytes += m.nbytes
                if m.kind is MessageKind.NEIGHBORHOOD_REQUEST:
                    self.requests_in_flight += 1
                elif m.kind is MessageKind.NEIGHBORHOOD_REPLY:
                    self.requests_in_flight -= 1
                inboxes[m.dst].append(m)
                if self.log is not None:
                    key = (m.dst, m.kind.value)
                    cnt, nb = grouped.get(key, (0, 0))
                    grouped[key] = (cnt + 1, nb + m.nbytes)
            if self.log is not None:
                for (dst, kind), (cnt, nb) in sorted(grouped.items()):
                    self.log.append(
                        "%d\t%s\t%d\t%d\t%s\t%d\t%d" % (self.round, phase, src, dst, kind, cnt, nb)
                    )
            self.outboxes[src] = []
        return inboxes

    def snapshot_round(self, phase_times: dict) -> dict:
        rec = {
            "round": self.round,
            "messages": dict(sorted(self.round_counts.items())),
            "bytes": self.round_bytes,
            "phase_times": phase_times,
        }
        self.round_counts = Counter()
        self.round_bytes = 0
        return rec


@dataclass(slots=True)
class _ShardCluster:
    size: int
    tok: int
    # neighbor id -> (aggregate, neighbor size, neighbor token)
    neighbors: dict
    nn: int | None = None
    will_merge: bool = False


class Shard:
    """Exclusive owner of one partition of clusters."""

    def __init__(self, index: int, assignment: ShardAssignment, code: int):
        self.index = index
        self.assignment = assignment
        self.code = code
        self.clusters: dict = {}
        # per-round working state
        self.pairs: list = []
        self.partner_data: dict = {}
        self.info: dict = {}
        self.rescan_flags: set = set()
        self.staged_results: dict = {}
        self.staged_deletes: list = []
        self.local_updates: list = []
        self.events: list = []

    def _own(self, cluster_id: int) -> _ShardCluster:
        c = self.clusters.get(cluster_id)
        if c is None:
            raise AssertionError(
                "shard %d asked for cluster %d it does not own" % (self.index, cluster_id)
            )
        return c

    # -- setup ---------------------------------------------------------------

    def compute_initial_nns(self) -> None:
        for c in self.clusters.values():
            c.nn = self._best_neighbor(c)

    def _best_neighbor(self, c: _ShardCluster):
        code = self.code
        best = None
        best_key = None
        for x, (agg, _, xt) in c.neighbors.items():
            w = agg_value(code, agg)
            if best_key is None or (w, xt) < best_key:
                best_key = (w, xt)
                best = x
        return best

    # -- find phase ----------------------------------------------------------

    def send_nn_queries(self, transport: Transport) -> None:
        me = self.index
        shard_of = self.assignment.shard_of
        for cid in sorted(self.clusters):
            nn = self.clusters[cid].nn
            if nn is not None and shard_of(nn) != me:
                transport.send(MessageKind.NN_QUERY, me, shard_of(nn), (cid, nn))

    def answer_nn_queries(self, inbox, transport: Transport) -> None:
        me = self.index
        shard_of = self.assignment.shard_of
        for m in inbox:
            asker, queried = m.payload
            nn = self._own(queried).nn
            transport.send(
                MessageKind.NN_REPLY, me, shard_of(asker), (asker, queried, -1 if nn is None else nn)
            )

    def resolve_wills(self, inbox) -> int:
        """Set will_merge from local info and replies; stash owned pairs."""
        nn_of_nn = {asker: reply for asker, _, reply in (m.payload for m in inbox)}
        me = self.index
        shard_of = self.assignment.shard_of
        self.pairs = []
        for cid in sorted(self.clusters):
            c = self.clusters[cid]
            nn = c.nn
            if nn is None:
                c.will_merge = False
                continue
            if shard_of(nn) == me:
                back = self.clusters[nn].nn
            else:
                back = nn_of_nn.get(cid, -1)
            c.will_merge = back == cid
            if c.will_merge and cid < nn:
                self.pairs.append((cid, nn))
        return len(self.pairs)

    # -- merge phase ---------------------------------------------------------

    def send_partner_requests(self, transport: Transport) -> None:
        me = self.index
        shard_of = self.assignment.shard_of
        self.partner_data = {}
        for a, b in self.pairs:
            if shard_of(b) == me:
                cb = self._own(b)
                self.partner_data[a] = (b, cb.size, cb.tok, cb.neighbors)
            else:
                transport.send(MessageKind.NEIGHBORHOOD_REQUEST, me, shard_of(b), (a, b))

    def answer_partner_requests(self, inbox, transport: Transport) -> None:
        me = self.index
        shard_of = self.assignment.shard_of
        for m in inbox:
            a, b = m.payload
            cb = self._own(b)
            entries = tuple((x, agg, xs, xt) for x, (agg, xs, xt) in sorted(cb.neighbors.items()))
            transport.send(
                MessageKind.NEIGHBORHOOD_REPLY, me, shard_of(a), (a, b, cb.size, cb.tok, entries)
            )

    def receive_partner_replies(self, inbox) -> None:
        for m in inbox:
            a, b, bsize, btok, entries = m.payload
            self.partner_data[a] = (b, bsize, btok, {x: (agg, xs, xt) for x, agg, xs, xt in entries})

    def _union_neighbor_ids(self, a: int) -> list:
        ca = self._own(a)
        b, _, _, b_nbrs = self.partner_data[a]
        ids = set(ca.neighbors) | set(b_nbrs)
        ids.discard(a)
        ids.discard(b)
        return sorted(ids)

    def send_info_queries(self, transport: Transport) -> None:
        me = self.index
        shard_of = self.assignment.shard_of
        self.info = {}
        for a, _ in self.pairs:
            for x in self._union_neighbor_ids(a):
                if shard_of(x) != me:
                    transport.send(MessageKind.NN_QUERY, me, shard_of(x), (a, x))

    def answer_info_queries(self, inbox, transport: Transport) -> None:
        me = self.index
        shard_of = self.assignment.shard_of
        for m in inbox:
            owner, x = m.payload
            c = self._own(x)
            if c.will_merge:
                _, psize, ptok = c.neighbors[c.nn]
                payload = (owner, x, c.nn, psize, ptok)
            else:
                payload = (owner, x, -1, 0, -1)
            transport.send(MessageKind.NN_REPLY, me, shard_of(owner), payload)

    def receive_info_replies(self, inbox) -> None:
        for m in inbox:
            owner, x, partner, psize, ptok = m.payload
            self.info[(owner, x)] = (None if partner < 0 else partner, psize, ptok)

    def _neighbor_info(self, owner: int, x: int):
        """(merge partner or None, partner size, partner token) for neighbor x."""
        if self.assignment.shard_of(x) == self.index:
            c = self._own(x)
            if c.will_merge:
                _, psize, ptok = c.neighbors[c.nn]
                return c.nn, psize, ptok
            return None, 0, -1
        return self.info[(owner, x)]

    def compute_merges(self, transport: Transport) -> None:
        """Build every owned pair's result from pre-round state; stage effects."""
        me = self.index
        code = self.code
        shard_of = self.assignment.shard_of
        self.staged_results = {}
        self.staged_deletes = []
        self.local_updates = []
        self.events = []
        for a, b in self.pairs:
            ca = self._own(a)
            _, bsize, btok, b_nbrs = self.partner_data[a]
            na = ca.neighbors
            rsize = ca.size + bsize
            rtok = ca.tok if ca.tok > btok else btok
            pair_agg = na[b][0]
            new = {}
            for x in self._union_neighbor_ids(a):
                ea = na.get(x)
                eb = b_nbrs.get(x)
                mirror = ea if ea is not None else eb
                xsize, xtok = mirror[1], mirror[2]
                partner, psize, ptok = self._neighbor_info(a, x)
                if partner is not None:
                    q_lo = x if x < partner else partner
                    if q_lo in new:
                        continue
                    q_hi = x ^ partner ^ q_lo
                    quads = []
                    for pm, pn in ((a, na), (b, b_nbrs)):
                        for qm in (q_lo, q_hi):
                            e = pn.get(qm)
                            if e is not None:
                                quads.append(((pm, qm) if pm < qm else (qm, pm), e[0]))
                    agg = None
                    for _, q in sorted(quads, key=lambda t: t[0]):
                        agg = combine_agg(code, agg, q)
                    new[q_lo] = (agg, xsize + psize, xtok if xtok > ptok else ptok)
                else:
                    agg = combine_agg(code, ea[0] if ea else None, eb[0] if eb else None)
                    new[x] = (agg, xsize, xtok)
                    payload = (x, a, b, agg, rsize, rtok)
                    if shard_of(x) == me:
                        self.local_updates.append(payload)
                    else:
                        transport.send(MessageKind.DISSIMILARITY_UPDATE, me, shard_of(x), payload)
            self.staged_results[a] = (rsize, rtok, new)
            if shard_of(b) == me:
                self.staged_deletes.append(b)
            else:
                transport.send(MessageKind.DELETE_NOTICE, me, shard_of(b), (b,))
            self.events.append((a, b, agg_value(code, pair_agg), rsize))

    def apply_round(self, inbox) -> None:
        """Apply staged results, deletions and all dissimilarity updates."""
        self.rescan_flags = set()
        for a in sorted(self.staged_results):
            rsize, rtok, new = self.staged_results[a]
            c = self._own(a)
            c.size = rsize
            c.tok = rtok
            c.neighbors = new
        for b in self.staged_deletes:
            del self.clusters[b]
        updates = list(self.local_updates)
        for m in inbox:
            if m.kind is MessageKind.DELETE_NOTICE:
                del self.clusters[m.payload[0]]
            else:
                updates.append(m.payload)
        for x, a, b, agg, rsize, rtok in sorted(updates, key=lambda u: (u[0], u[1])):
            c = self._own(x)
            c.neighbors.pop(b, None)
            c.neighbors[a] = (agg, rsize, rtok)
            if c.nn == a or c.nn == b:
                self.rescan_flags.add(x)

    # -- nearest-neighbor phase ------------------------------------------------

    def rescan(self) -> int:
        updates = 0
        for cid in sorted(self.clusters):
            c = self.clusters[cid]
            if c.will_merge or cid in self.rescan_flags:
                c.nn = self._best_neighbor(c)
                updates += 1
            c.will_merge = False
        self.rescan_flags = set()
        return updates


def run_sharded(g: DissimilarityGraph, linkage: Linkage, num_shards: int,
                workers_per_shard: int = 1, keep_log: bool = False):
    """Cluster a graph on simulated shards with batched messaging.

    Returns (dendrogram, round stats, transport stats).  The dendrogram is
    identical to rac_run's for every shard count; message counts depend only
    on the input and the shard count.
    """
    if num_shards < 1:
        raise ValueError("need at least one shard")
    code = linkage.code
    assignment = ShardAssignment(num_shards)
    shards = [Shard(i, assignment, code) for i in range(num_shards)]
    for i in range(g.n):
        shards[assignment.shard_of(i)].clusters[i] = _ShardCluster(1, i, {})
    for (u, v), w in g.edges.items():
        agg = edge_agg(code, w)
        shards[assignment.shard_of(u)].clusters[u].neighbors[v] = (agg, 1, v)
        shards[assignment.shard_of(v)].clusters[v].neighbors[u] = (agg, 1, u)
    transport = Transport(num_shards, code, keep_log)
    pool = ThreadPoolExecutor(max_workers=num_shards) if workers_per_shard > 1 and num_shards > 1 else None

    def each(fn):
        """Run fn on every shard; returns per-shard results and wall times."""
        def task(s):
            t0 = time.perf_counter()
            out = fn(s)
            return out, time.perf_counter() - t0
        if pool is None:
            results = [task(s) for s in shards]
        else:
            results = list(pool.map(task, shards))
        return [r for r, _ in results], [t for _, t in results]

    merges = []
    stats = []
    tstats = TransportStats(rounds=[], log=transport.log)
    round_idx = 0
    try:
        for s in shards:
            s.compute_initial_nns()
        while True:
            transport.round = round_idx + 1
            t0 = time.perf_counter()
            _, t_find1 = each(lambda s: s.send_nn_queries(transport))
            inboxes = transport.flush("find_rnn")
            _, t_find2 = each(lambda s: s.answer_nn_queries(inboxes[s.index], transport))
            inboxes = transport.flush("find_rnn")
            counts, t_find3 = each(lambda s: s.resolve_wills(inboxes[s.index]))
            t1 = time.perf_counter()
            if sum(counts) == 0:
                break
            round_idx += 1
            clusters_before = sum(len(s.clusters) for s in shards)

            _, t_m1 = each(lambda s: s.send_partner_requests(transport))
            inboxes = transport.flush("merge")
            _, t_m2 = each(lambda s: s.answer_partner_requests(inboxes[s.index], transport))
            inboxes = transport.flush("merge")
            _, t_m3 = each(lambda s: s.receive_partner_replies(inboxes[s.index]))
            if transport.requests_in_flight:
                raise AssertionError("unanswered neighborhood requests after merge fetch")
            _, t_m4 = each(lambda s: s.send_info_queries(transport))
            inboxes = transport.flush("merge")
            _, t_m5 = each(lambda s: s.answer_info_queries(inboxes[s.index], transport))
            inboxes = transport.flush("merge")
            _, t_m6 = each(lambda s: s.receive_info_replies(inboxes[s.index]))
            _, t_m7 = each(lambda s: s.compute_merges(transport))
            inboxes = transport.flush("merge")
            _, t_m8 = each(lambda s: s.apply_round(inboxes[s.index]))
            t2 = time.perf_counter()

            counts, t_nn = each(lambda s: s.rescan())
            nn_updates = sum(counts)
            t3 = time.perf_counter()

            round_events = sorted(ev for s in shards for ev in s.events)
            for a, b, w, size in round_events:
                merges.append(MergeEvent.make(a, b, w, round_idx, size))
            n_merges = len(round_events)
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
            phase_times = {
                "find_rnn": [a + b + c for a, b, c in zip(t_find1, t_find2, t_find3)],
                "merge": [sum(ts) for ts in zip(t_m1, t_m2, t_m3, t_m4, t_m5, t_m6, t_m7, t_m8)],
                "nn_update": t_nn,
            }
            tstats.rounds.append(transport.snapshot_round(phase_times))
    finally:
        if pool is not None:
            pool.shutdown(wait=False)
    return Dendrogram(g.n, merges), stats, tstats
