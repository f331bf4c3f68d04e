import numpy as np
import pytest

from rac.dendrogram import merge_sets_equal
from rac.graph import DissimilarityGraph
from rac.hac import contract_pair, hac_naive, hac_run, initial_clusters, run_from_state
from rac.linkage import Linkage

from conftest import random_dense_graph, random_sparse_graph

LINE = DissimilarityGraph.complete_from_points([0, 1, 3, 7])


class TestHacRun:
    def test_single_point(self):
        d = hac_run(DissimilarityGraph(1), Linkage.single)
        assert d.merges == []

    def test_line_single_linkage(self):
        d = hac_run(LINE, Linkage.single)
        assert [m.dissimilarity for m in d.merges] == [1, 2, 4]
        assert [(m.left, m.right) for m in d.merges] == [(0, 1), (0, 2), (0, 3)]

    def test_line_complete_linkage(self):
        d = hac_run(LINE, Linkage.complete)
        assert [m.dissimilarity for m in d.merges] == [1, 3, 7]

    def test_disconnected_returns_forest(self):
        g = DissimilarityGraph(4)
        g.add_edge(0, 1, 1.0)
        g.add_edge(2, 3, 2.0)
        d = hac_run(g, Linkage.average)
        assert len(d.merges) == 2
        assert d.roots() == 2
        d.validate()

    @pytest.mark.parametrize("linkage", list(Linkage))
    def test_merge_dissimilarities_non_decreasing(self, linkage, rng):
        for _ in range(20):
            g = random_dense_graph(int(rng.integers(2, 40)), rng)
            d = hac_run(g, linkage)
            ws = [m.dissimilarity for m in d.merges]
            assert all(b >= a - 1e-12 for a, b in zip(ws, ws[1:]))


class TestHacNaive:
    def test_two_points(self):
        g = DissimilarityGraph(2)
        g.add_edge(0, 1, 0.25)
        d = hac_naive(g, Linkage.single)
        assert len(d.merges) == 1 and d.merges[0].dissimilarity == 0.25

    def test_triangle_first_merge_is_global_minimum(self):
        g = DissimilarityGraph.from_edges(3, [(0, 1, 3.0), (0, 2, 1.0), (1, 2, 2.0)])
        d = hac_naive(g, Linkage.average)
        assert (d.merges[0].left, d.merges[0].right) == (0, 2)

    def test_size_cap(self):
        with pytest.raises(ValueError, match="refusing"):
            hac_naive(DissimilarityGraph(513), Linkage.single)

    @pytest.mark.parametrize("linkage", list(Linkage))
    def test_agrees_with_hac_run_dense(self, linkage, rng):
        for _ in range(15):
            g = random_dense_graph(int(rng.integers(2, 48)), rng)
            assert merge_sets_equal(hac_run(g, linkage), hac_naive(g, linkage))

    @pytest.mark.parametrize("linkage", list(Linkage))
    def test_agrees_with_hac_run_sparse(self, linkage, rng):
        for _ in range(15):
            g = random_sparse_graph(int(rng.integers(2, 40)), rng)
            assert merge_sets_equal(hac_run(g, linkage), hac_naive(g, linkage))

    @pytest.mark.parametrize("linkage", list(Linkage))
    def test_cached_updates_track_definition_on_complete_graphs(self, linkage, rng):
        # compare_lw raises if the size-weighted update drifts from the
        # recomputed definition by more than 1e-9 relative
        for _ in range(5):
            g = random_dense_graph(24, rng)
            hac_naive(g, linkage, compare_lw=True)

    def test_compare_lw_requires_complete_graph(self):
        g = DissimilarityGraph.from_edges(3, [(0, 1, 1.0), (1, 2, 2.0)])
        with pytest.raises(ValueError, match="complete"):
            hac_naive(g, Linkage.average, compare_lw=True)


class TestMergeOrderInvariance:
    """Contracting a reciprocal pair by hand must not change later merges."""

    @pytest.mark.parametrize("linkage", list(Linkage))
    def test_contracted_run_matches_full_run(self, linkage):
        rng = np.random.default_rng(42)
        checked = 0
        while checked < 50:
            n = int(rng.integers(4, 32))
            g = random_dense_graph(n, rng)
            full = hac_run(g, linkage)
            # pick the reciprocal pair that merges first and contract it by hand
            first = full.merges[0]
            state = initial_clusters(g, linkage)
            contract_pair(state, first.left, first.right, linkage)
            rest = run_from_state(state, linkage, n)
            assert merge_sets_equal(
                full, type(full)(n, [first] + rest.merges)
            )
            checked += 1

    def test_contracting_any_reciprocal_pair_preserves_merges(self):
        rng = np.random.default_rng(7)
        g = random_dense_graph(16, rng)
        linkage = Linkage.average
        full = hac_run(g, linkage)
        # find all reciprocal pairs at the initial state
        from rac.engine import build_cluster_states, find_reciprocal_nearest_neighbors

        clusters = build_cluster_states(g, linkage)
        pairs = find_reciprocal_nearest_neighbors(clusters)
        assert pairs
        from rac.dendrogram import Dendrogram, MergeEvent

        for a, b in pairs:
            state = initial_clusters(g, linkage)
            contract_pair(state, a, b, linkage)
            rest = run_from_state(state, linkage, 16, start_round=2)
            hand = MergeEvent.make(a, b, g.weight(a, b), 1, 2)
            assert merge_sets_equal(Dendrogram(16, [hand] + rest.merges), full)


class TestTieHandling:
    def test_min_id_order_counterexample_now_agrees(self):
        # weights tied at 1.0: breaking ties by raw cluster id would make the
        # sequential order merge {0,3} with {1}; the token order keeps both
        # algorithms on {1,2}
        g = DissimilarityGraph.from_edges(4, [
            (0, 3, 0.5), (1, 2, 1.0), (1, 3, 1.0), (0, 1, 2.0), (2, 3, 5.0), (0, 2, 5.0),
        ])
        from rac.engine import rac_run

        d_seq = hac_run(g, Linkage.single)
        d_par, _ = rac_run(g, Linkage.single)
        assert merge_sets_equal(d_seq, d_par)
        sets = d_seq.canonical_merges()
        assert frozenset((frozenset((1,)), frozenset((2,)))) in sets

    @pytest.mark.parametrize("linkage", list(Linkage))
    def test_heavily_tied_weights(self, linkage):
        rng = np.random.default_rng(13)
        for _ in range(40):
            g = random_sparse_graph(int(rng.integers(2, 20)), rng, p=0.6, integer_weights=True)
            assert merge_sets_equal(hac_run(g, linkage), hac_naive(g, linkage))
