"""Merge forests: the output of every clustering engine.

A merge event records the two child cluster ids, the surviving id (always the
lower one), the dissimilarity at which the merge happened, the round it
happened in, and the resulting size.  Merges are kept in replay order (rounds
ascending, owners ascending inside a round), so walking the list always sees
children before parents.

Two dendrograms are compared by the unordered pair of leaf sets of each
merge's children, never by dissimilarity values or round indices.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class MergeEvent:
    left: int
    right: int
    result: int
    dissimilarity: float
    round: int
    result_size: int

    def __post_init__(self):
        if self.left == self.right:
            raise ValueError("merge children must be distinct")
        if self.result != min(self.left, self.right):
            raise ValueError("merge result must adopt the lower child id")
        if self.result_size < 2:
            raise ValueError("merged cluster must contain at least two points")

    @staticmethod
    def make(a: int, b: int, dissimilarity: float, round_idx: int, size: int) -> "MergeEvent":
        lo, hi = (a, b) if a < b else (b, a)
        return MergeEvent(lo, hi, lo, dissimilarity, round_idx, size)


@dataclass
class Dendrogram:
    n_points: int
    merges: list = field(default_factory=list)

    def __post_init__(self):
        if self.n_points < 1:
            raise ValueError("dendrogram needs at least one point")

    # -- structural checks ---------------------------------------------------

    def validate(self) -> None:
        """Check the merges form a forest with consistent sizes and rounds.

        Every merge must join two live clusters, the result adopts the lower
        id, sizes add up, and rounds never decrease along the replay order.
        """
        size = {i: 1 for i in range(self.n_points)}
        last_round = 0
        for m in self.merges:
            if m.round < last_round:
                raise AssertionError("merge rounds out of replay order")
            last_round = m.round
            if m.left not in size or m.right not in size:
                raise AssertionError(
                    "merge (%d, %d) references a dead or unknown cluster" % (m.left, m.right)
                )
            expect = size[m.left] + size[m.right]
            if m.result_size != expect:
                raise AssertionError(
                    "merge (%d, %d) size %d != %d" % (m.left, m.right, m.result_size, expect)
                )
            size[m.result] = expect
            del size[m.right]
        if len(size) != self.n_points - len(self.merges):
            raise AssertionError("cluster count inconsistent with merge count")

    def roots(self) -> int:
        """Number of trees in the forest."""
        return self.n_points - len(self.merges)

    def height(self) -> int:
        """Longest leaf-to-root chain of merges over all trees."""
        depth = {i: 0 for i in range(self.n_points)}
        best = 0
        for m in self.merges:
            d = max(depth[m.left], depth[m.right]) + 1
            depth[m.result] = d
            if d > best:
                best = d
        return best

    # -- leaf-set identities ---------------------------------------------------

    def leaf_sets(self):
        """Frozen leaf sets of each merge's children, in replay order."""
        members = {i: frozenset((i,)) for i in range(self.n_points)}
        out = []
        for m in self.merges:
            left, right = members[m.left], members[m.right]
            out.append((left, right, m))
            members[m.result] = left | right
            del members[m.right]
        return out

    def canonical_merges(self) -> frozenset:
        """Set of merges identified by the unordered pair of child leaf sets."""
        return frozenset(frozenset((l, r)) for l, r, _ in self.leaf_sets())

    def child_sizes(self):
        """(left size, right size) per merge, in replay order."""
        size = {i: 1 for i in range(self.n_points)}
        out = []
        for m in self.merges:
            out.append((size[m.left], size[m.right]))
            size[m.result] = size[m.left] + size[m.right]
            del size[m.right]
        return out

    # -- flat cuts -------------------------------------------------------------

    def flat_clusters(self, k: int) -> list:
        """Partition with exactly k clusters.

        Replays merges in increasing (dissimilarity, min id, max id) order and
        stops when k clusters remain.  Cuts below the number of forest roots
        are unreachable.
        """
        if k > self.n_points:
            raise ValueError("cannot cut %d clusters out of %d points" % (k, self.n_points))
        floor = self.roots()
        if k < floor:
            raise ValueError(
                "cannot cut %d clusters: this forest bottoms out at %d" % (k, floor)
            )
        parent = list(range(self.n_points))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        remaining = self.n_points
        order = sorted(
            self.merges, key=lambda m: (m.dissimilarity, min(m.left, m.right), max(m.left, m.right))
        )
        for m in order:
            if remaining == k:
                break
            ra, rb = find(m.left), find(m.right)
            if ra == rb:
                raise AssertionError("merge (%d, %d) joins an already-joined pair" % (m.left, m.right))
            lo, hi = (ra, rb) if ra < rb else (rb, ra)
            parent[hi] = lo
            remaining -= 1
        groups = {}
        for i in range(self.n_points):
            groups.setdefault(find(i), []).append(i)
        return sorted((sorted(g) for g in groups.values()), key=lambda g: g[0])


def merge_sets_equal(d1: Dendrogram, d2: Dendrogram) -> bool:
    """Exact merge-set equality by child leaf sets, without materializing them.

    Children are hash-consed structural labels: a label pins down the entire
    subtree below it, so equal label pairs mean equal leaf-set pairs.
    """
    if d1.n_points != d2.n_points or len(d1.merges) != len(d2.merges):
        return False
    intern: dict = {}

    def tokens(d):
        label = list(range(d.n_points))
        out = set()
        for m in d.merges:
            pair = (label[m.left], label[m.right])
            tok = intern.setdefault(pair, d.n_points + len(intern))
            label[m.result] = tok
            out.add(pair)
        return out

    return tokens(d1) == tokens(d2)


def first_merge_difference(d1: Dendrogram, d2: Dendrogram):
    """Smallest merge present in exactly one dendrogram, or None if equal.

    Returns (which, left_leaves, right_leaves) with which in {1, 2}.  Meant
    for small instances; comparison at scale should use merge_sets_equal.
    """
    c1 = {frozenset((l, r)): m for l, r, m in d1.leaf_sets()}
    c2 = {frozenset((l, r)): m for l, r, m in d2.leaf_sets()}
    only1 = sorted(c1.keys() - c2.keys(), key=lambda p: sorted(map(sorted, p)))
    only2 = sorted(c2.keys() - c1.keys(), key=lambda p: sorted(map(sorted, p)))
    if not only1 and not only2:
        return None
    candidates = []
    if only1:
        candidates.append((1, only1[0]))
    if only2:
        candidates.append((2, only2[0]))
    which, pair = min(candidates, key=lambda t: sorted(map(sorted, t[1])))
    sides = sorted(map(sorted, pair))
    return which, sides[0], sides[1]
