"""Generators and checkers for the analytical behavior of merge rounds.

Covers four families of results at desk scale:

* a 1-D point family whose dendrogram is a balanced tree of height n yet
  needs on the order of 2^n merge rounds, because only one reciprocal pair
  exists along the singleton tail each round;
* stability: trees where every sub-part of a node is closer to the rest of
  its node than to anything disjoint complete in exactly height-many rounds;
* a stopping-time process X_{k+1} = X_k - Z_k with E[Z_k|X_k] >= alpha X_k,
  whose absorption time is logarithmic in expectation;
* exact per-round merge probabilities for single linkage under random edge
  ranks, with a closed form checked against exhaustive rank enumeration.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .dendrogram import Dendrogram, MergeEvent
from .engine import rac_run
from .graph import DissimilarityGraph
from .graph_io import PointSet
from .linkage import Linkage, direct_linkage

NEGATIVE_EXAMPLE_MAX_GEN = 12
NEGATIVE_EXAMPLE_MAX_RUN = 8
STABLE_CHECK_MAX_POINTS = 16
MERGE_PROB_MAX_EDGES = 9


# ---------------------------------------------------------------------------
# Slow-round construction.
# ---------------------------------------------------------------------------


def gen_negative_example(n: int) -> PointSet:
    """2^n points on a line with strictly increasing consecutive gaps.

    Point k sits at (k+1) + eps*(k+1)^2 with eps = 2^(-4n), so gap k has
    length 1 + eps*(2k+3): every point's nearest neighbor is its left
    neighbor, and reciprocal pairs form only at the left end of the
    unmerged tail.
    """
    if not 1 <= n <= NEGATIVE_EXAMPLE_MAX_GEN:
        raise ValueError(
            "n must be in [1, %d] to keep the construction exactly representable"
            % NEGATIVE_EXAMPLE_MAX_GEN
        )
    eps = 2.0 ** (-4 * n)
    ks = np.arange(1, 2 ** n + 1, dtype=np.float64)
    return PointSet((ks + eps * ks * ks)[:, None])


def verify_negative_example(n: int):
    """Run average-linkage rounds on the construction; check its signature.

    Asserts the dendrogram has height exactly n, at least 2^(n-1) rounds ran,
    and no round merged two pairs that both contain an original singleton.
    Returns (height, rounds).
    """
    if n > NEGATIVE_EXAMPLE_MAX_RUN:
        raise ValueError("full runs are capped at n=%d" % NEGATIVE_EXAMPLE_MAX_RUN)
    points = gen_negative_example(n)
    g = DissimilarityGraph.complete_from_points(points.vectors[:, 0])
    dendro, stats = rac_run(g, Linkage.average)
    height = dendro.height()
    rounds = len(stats)
    if height != n:
        raise AssertionError("expected height %d, got %d" % (n, height))
    if rounds < 2 ** (n - 1):
        raise AssertionError("expected at least %d rounds, got %d" % (2 ** (n - 1), rounds))
    singleton_merges = {}
    for m, (ls, rs) in zip(dendro.merges, dendro.child_sizes()):
        if ls == 1 or rs == 1:
            singleton_merges[m.round] = singleton_merges.get(m.round, 0) + 1
    offenders = {r: c for r, c in singleton_merges.items() if c > 1}
    if offenders:
        raise AssertionError(
            "rounds with more than one singleton-involving merge: %r" % offenders
        )
    return height, rounds


# ---------------------------------------------------------------------------
# Stable trees.
# ---------------------------------------------------------------------------


def is_stable_tree(g: DissimilarityGraph, tree: Dendrogram, linkage: Linkage) -> bool:
    """Exhaustive check of the stability condition over all node pairs.

    For every ordered pair of non-overlapping tree nodes (X, Y), every
    proper non-empty A of X and non-empty B of Y must satisfy
    d(A, X without A) < d(A, B), with d the given linkage on the base graph.
    Strict inequality: ties make a tree unstable.
    """
    if g.n > STABLE_CHECK_MAX_POINTS:
        raise ValueError("exhaustive check capped at %d points" % STABLE_CHECK_MAX_POINTS)
    # On complete graphs d(A, B) decomposes over B's columns (min of per-y
    # minima, max of maxima, mean of equally-weighted means), so the y-column
    # values are computed once per A.  Absent pairs break the equal weighting
    # for average linkage, so sparse inputs take the direct path.
    complete = g.is_complete()
    nodes = [frozenset((i,)) for i in range(tree.n_points)]
    nodes.extend(l | r for l, r, _ in tree.leaf_sets())
    for x_set in nodes:
        if len(x_set) < 2:
            continue  # no proper non-empty split
        xs = sorted(x_set)
        for y_set in nodes:
            if x_set & y_set:
                continue
            ys = sorted(y_set)
            for bits in range(1, (1 << len(xs)) - 1):
                a = [xs[i] for i in range(len(xs)) if bits >> i & 1]
                rest = [p for p in xs if p not in a]
                inner = direct_linkage(linkage, a, rest, g)
                if inner is None:
                    return False
                v = None
                if complete:
                    v = [direct_linkage(linkage, a, [y], g) for y in ys]
                for bbits in range(1, 1 << len(ys)):
                    if complete:
                        chosen = [v[i] for i in range(len(ys)) if bbits >> i & 1]
                        if linkage is Linkage.single:
                            d_ab = min(chosen)
                        elif linkage is Linkage.complete:
                            d_ab = max(chosen)
                        else:
                            d_ab = sum(chosen) / len(chosen)
                    else:
                        b = [ys[i] for i in range(len(ys)) if bbits >> i & 1]
                        d_ab = direct_linkage(linkage, a, b, g)
                        if d_ab is None:
                            return False
                    if not inner < d_ab:
                        return False
    return True


def gen_stable_instance(depth: int, separation: float, branching: int = 2,
                        seed: int = 0, linkage: Linkage = Linkage.average):
    """Well-separated balanced groups on a line plus their intended tree.

    Sibling groups at level l sit `separation` times the level-(l-1) subtree
    diameter apart, with a small seeded jitter on each point.  Returns the
    points and the balanced dendrogram they should produce (level = round).
    """
    if branching != 2:
        raise ValueError("only binary instances are generated")
    if depth < 1:
        raise ValueError("depth must be at least 1")
    if separation < 3:
        raise ValueError("separation below 3 cannot guarantee stability")
    offsets = [1.0]
    diam = 1.0
    for _ in range(depth - 1):
        off = separation * diam
        offsets.append(off)
        diam = off + diam
    n = 2 ** depth
    rng = np.random.default_rng(seed)
    base = np.zeros(n)
    for level, off in enumerate(offsets, start=1):
        step = 2 ** level
        for start in range(0, n, step):
            base[start + step // 2: start + step] += off
    jitter = rng.uniform(-0.02, 0.02, size=n)
    positions = base + jitter
    g = DissimilarityGraph.complete_from_points(positions)
    merges = []
    for level in range(1, depth + 1):
        width = 2 ** level
        for start in range(0, n, width):
            left = start
            right = start + width // 2
            w = direct_linkage(
                linkage, range(left, right), range(right, start + width), g
            )
            merges.append(MergeEvent.make(left, right, w, level, width))
    expected = Dendrogram(n, merges)
    expected.validate()
    return PointSet(positions[:, None]), expected


# ---------------------------------------------------------------------------
# Stopping-time process.
# ---------------------------------------------------------------------------


def sampler_uniform(rng, x: int) -> int:
    """Z uniform on 1..x-1; E[Z|x] = x/2."""
    return int(rng.integers(1, x))


def sampler_halving(rng, x: int) -> int:
    """Deterministic Z = max(1, x // 2); E[Z|x] >= x/3 for x >= 2."""
    return max(1, x // 2)


def sampler_all_but_one(rng, x: int) -> int:
    """Deterministic Z = x - 1: absorb in one step."""
    return x - 1


SAMPLERS = {
    "uniform": (sampler_uniform, 0.4),
    "halving": (sampler_halving, 1.0 / 3.0),
    "all-but-one": (sampler_all_but_one, 0.5),
}


@dataclass
class DecayProcessConfig:
    n: int
    alpha: float
    sampler: object  # callable (rng, x) -> int
    trials: int = 10000
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.trials < 1:
            raise ValueError("need at least one trial")
        if isinstance(self.sampler, str):
            self.sampler = SAMPLERS[self.sampler][0]

    @property
    def bound(self) -> float:
        """Expected-absorption bound log(n) / log(1/(1-alpha))."""
        return math.log(self.n) / math.log(1.0 / (1.0 - self.alpha))


@dataclass
class DecayResult:
    mean: float
    p50: float
    p99: float
    bound: float
    trials: int


def sim_decay_process(cfg: DecayProcessConfig) -> DecayResult:
    """Simulate the decrement process to absorption at 1 over many trials."""
    rng = np.random.default_rng(cfg.seed)
    taus = np.empty(cfg.trials, dtype=np.int64)
    sampler = cfg.sampler
    for t in range(cfg.trials):
        x = cfg.n
        steps = 0
        while x > 1:
            z = sampler(rng, x)
            if not 1 <= z <= x - 1:
                raise ValueError("sampler returned Z=%r outside [1, %d]" % (z, x - 1))
            x -= z
            steps += 1
        taus[t] = steps
    return DecayResult(
        mean=float(taus.mean()),
        p50=float(np.percentile(taus, 50)),
        p99=float(np.percentile(taus, 99)),
        bound=cfg.bound,
        trials=cfg.trials,
    )


# ---------------------------------------------------------------------------
# Random-graph round simulations.
# ---------------------------------------------------------------------------


@dataclass
class RoundSimResult:
    """Merge fractions and round counts pooled over Monte Carlo trials."""

    round_counts: list = field(default_factory=list)
    observations: list = field(default_factory=list)  # (round, clusters_before, merges)

    def mean_rounds(self) -> float:
        return sum(self.round_counts) / len(self.round_counts)

    def mean_fraction(self, min_clusters: int = 3) -> float:
        fr = [m / c for _, c, m in self.observations if c >= min_clusters]
        return sum(fr) / len(fr) if fr else 0.0

    def round_table(self) -> list:
        """Per-round-index aggregates across trials, one record per round."""
        by_round = {}
        for r, c, m in self.observations:
            clusters, merges, trials = by_round.get(r, (0, 0, 0))
            by_round[r] = (clusters + c, merges + m, trials + 1)
        return [
            {
                "record": "round",
                "round": r,
                "trials": t,
                "mean_clusters_before": c / t,
                "mean_merges": m / t,
                "mean_fraction": m / c,
            }
            for r, (c, m, t) in sorted(by_round.items())
        ]

    def summary(self) -> dict:
        counts = np.array(self.round_counts)
        return {
            "record": "summary",
            "trials": len(self.round_counts),
            "mean_rounds": float(counts.mean()),
            "p50_rounds": float(np.percentile(counts, 50)),
            "p99_rounds": float(np.percentile(counts, 99)),
            "mean_fraction": self.mean_fraction(3),
        }


def _collect(result: RoundSimResult, stats) -> None:
    result.round_counts.append(len(stats))
    result.observations.extend((s.round, s.clusters_before, s.merges) for s in stats)


def sim_grid_single_linkage(n: int, trials: int, seed: int = 0) -> RoundSimResult:
    """Single linkage on sorted uniform points, consecutive-gap path graph."""
    if n < 2:
        raise ValueError("need at least two points")
    result = RoundSimResult()
    root = np.random.SeedSequence(seed)
    for child in root.spawn(trials):
        rng = np.random.default_rng(child)
        xs = np.sort(rng.uniform(size=n))
        g = DissimilarityGraph.path_from_gaps(np.diff(xs))
        _, stats = rac_run(g, Linkage.single)
        _collect(result, stats)
    return result


def random_regular_graphish(n: int, d: int, rng) -> DissimilarityGraph:
    """Random graph with all degrees <= d (exactly d up to pairing collisions).

    d=1 is a random perfect matching, d=2 a random cycle; higher d pairs
    stubs at random and drops self-loops and duplicate pairs.
    """
    if n * d % 2:
        raise ValueError("n*d must be even")
    g = DissimilarityGraph(n)
    if d == 1:
        perm = rng.permutation(n)
        for i in range(0, n, 2):
            g.add_edge(int(perm[i]), int(perm[i + 1]), float(rng.uniform()))
        return g
    if d == 2:
        perm = rng.permutation(n)
        for i in range(n):
            u, v = int(perm[i]), int(perm[(i + 1) % n])
            g.add_edge(u, v, float(rng.uniform()))
        return g
    stubs = np.repeat(np.arange(n), d)
    stubs = stubs[rng.permutation(stubs.size)]
    for i in range(0, stubs.size, 2):
        u, v = int(stubs[i]), int(stubs[i + 1])
        if u == v or g.weight(u, v) is not None:
            continue
        g.add_edge(u, v, float(rng.uniform()))
    return g


def sim_bounded_degree_graph(n: int, d: int, trials: int, seed: int = 0) -> RoundSimResult:
    """Single linkage on random-weighted bounded-degree graphs."""
    result = RoundSimResult()
    root = np.random.SeedSequence(seed)
    for child in root.spawn(trials):
        rng = np.random.default_rng(child)
        g = random_regular_graphish(n, d, rng)
        _, stats = rac_run(g, Linkage.single)
        _collect(result, stats)
    return result


# ---------------------------------------------------------------------------
# Exact merge probabilities for single linkage under random edge ranks.
# ---------------------------------------------------------------------------


@dataclass
class ClusterPartitionGraph:
    """Multigraph on clusters: (i, j) -> number of inter-cluster edges."""

    k: int
    multiplicity: dict

    def __post_init__(self):
        clean = {}
        for (i, j), c in self.multiplicity.items():
            if i == j:
                raise ValueError("intra-cluster entry (%d, %d)" % (i, j))
            if not 0 <= i < self.k or not 0 <= j < self.k:
                raise ValueError("cluster index out of range in (%d, %d)" % (i, j))
            if c < 1:
                raise ValueError("multiplicity must be positive")
            key = (i, j) if i < j else (j, i)
            clean[key] = clean.get(key, 0) + c
        self.multiplicity = clean

    @property
    def num_edges(self) -> int:
        return sum(self.multiplicity.values())

    def degree(self, i: int) -> int:
        return sum(c for (a, b), c in self.multiplicity.items() if a == i or b == i)

    def edge_slots(self) -> list:
        slots = []
        for (i, j), c in sorted(self.multiplicity.items()):
            slots.extend([(i, j)] * c)
        return slots


def merge_prob_exhaustive(g: ClusterPartitionGraph) -> dict:
    """Exact merge probability per cluster pair over all edge-rank orders.

    A pair merges when the smallest-ranked edge touching either cluster runs
    between them.  Walking each permutation in rank order, that happens
    exactly when a slot's two endpoints are both unseen so far.
    """
    m = g.num_edges
    if m > MERGE_PROB_MAX_EDGES:
        raise ValueError("exhaustive enumeration capped at %d edges" % MERGE_PROB_MAX_EDGES)
    slots = g.edge_slots()
    total = math.factorial(m)
    counts = {pair: 0 for pair in g.multiplicity}
    for perm in itertools.permutations(range(m)):
        seen = set()
        for idx in perm:
            i, j = slots[idx]
            if i not in seen and j not in seen:
                counts[(i, j)] += 1
            seen.add(i)
            seen.add(j)
            if len(seen) >= g.k:
                break
    return {pair: Fraction(c, total) for pair, c in counts.items()}


def merge_prob_formula(d_ij: int, d_i: int, d_j: int) -> Fraction:
    """Closed-form merge probability: d_ij / (d_i + d_j - d_ij).

    The smallest rank among the d_i + d_j - d_ij distinct edges touching
    either cluster is uniform over them; the pair merges when it is one of
    the d_ij edges between them.  The subtraction is forced by the
    exhaustive oracle (triangle = 1/3, not 1/5): the per-cluster totals each
    count the shared edges once already.
    """
    if d_ij < 1:
        raise ValueError("clusters share no edge")
    if d_i < d_ij or d_j < d_ij:
        raise ValueError("per-cluster totals cannot be below the shared count")
    return Fraction(d_ij, d_i + d_j - d_ij)


def expected_merges(g: ClusterPartitionGraph) -> Fraction:
    """Sum of pairwise merge probabilities (expected merges in one round)."""
    total = Fraction(0)
    for (i, j), c in g.multiplicity.items():
        total += merge_prob_formula(c, g.degree(i), g.degree(j))
    return total
