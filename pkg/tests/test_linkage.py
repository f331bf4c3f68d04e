import math

import pytest
from hypothesis import given, settings, strategies as st

from rac.graph import DissimilarityGraph
from rac.linkage import (
    Linkage,
    agg_value,
    check_reducibility,
    combine_agg,
    direct_linkage,
    edge_agg,
    lance_williams_update,
    pair_key,
)


def graph_of(n, weights):
    g = DissimilarityGraph(n)
    for (u, v), w in weights.items():
        g.add_edge(u, v, w)
    return g


class TestDirectLinkage:
    def test_single_takes_minimum_cross_pair(self):
        g = graph_of(3, {(0, 1): 2.0, (0, 2): 5.0})
        assert direct_linkage(Linkage.single, {0}, {1, 2}, g) == 2.0

    def test_one_pair_case_all_linkages_coincide(self):
        g = graph_of(2, {(0, 1): 3.7})
        for lk in Linkage:
            assert direct_linkage(lk, {0}, {1}, g) == 3.7

    def test_average_is_mean_of_present_pairs(self):
        g = graph_of(3, {(0, 1): 1.0, (0, 2): 3.0})
        assert direct_linkage(Linkage.average, {0}, {1, 2}, g) == 2.0

    def test_no_cross_edges_means_undefined(self):
        g = graph_of(4, {(0, 1): 1.0, (2, 3): 1.0})
        assert direct_linkage(Linkage.single, {0, 1}, {2, 3}, g) is None

    def test_sparse_divisor_counts_present_pairs_only(self):
        g = graph_of(4, {(0, 2): 6.0, (0, 3): 2.0, (1, 2): 4.0})
        # three of four cross pairs present
        assert direct_linkage(Linkage.average, {0, 1}, {2, 3}, g) == 4.0

    def test_overlap_is_rejected(self):
        g = graph_of(3, {(0, 1): 1.0})
        with pytest.raises(ValueError, match="overlap"):
            direct_linkage(Linkage.single, {0, 1}, {1, 2}, g)

    def test_empty_side_is_rejected(self):
        g = graph_of(2, {(0, 1): 1.0})
        with pytest.raises(ValueError, match="non-empty"):
            direct_linkage(Linkage.single, set(), {1}, g)


class TestLanceWilliamsUpdate:
    def test_single(self):
        assert lance_williams_update(Linkage.single, 1.0, 3.0, 1, 1) == 1.0

    def test_complete(self):
        assert lance_williams_update(Linkage.complete, 1.0, 3.0, 1, 1) == 3.0

    def test_average_weights_by_size(self):
        got = lance_williams_update(Linkage.average, 1.0, 3.0, 1, 2)
        assert got == pytest.approx(7.0 / 3.0, rel=1e-15)

    def test_absent_side_passes_through(self):
        assert lance_williams_update(Linkage.single, 1.0, None, 1, 1) == 1.0
        assert lance_williams_update(Linkage.average, None, 2.5, 3, 4) == 2.5

    def test_both_absent(self):
        assert lance_williams_update(Linkage.complete, None, None, 1, 1) is None

    def test_bad_sizes_rejected(self):
        with pytest.raises(ValueError, match="sizes"):
            lance_williams_update(Linkage.average, 1.0, 2.0, 0, 1)


class TestReducibility:
    def test_single_linkage_triple(self):
        g = graph_of(3, {(0, 2): 1.0, (1, 2): 5.0, (0, 1): 2.0})
        assert check_reducibility(Linkage.single, {0}, {1}, {2}, g)

    def test_complete_linkage_example(self):
        g = graph_of(3, {(0, 2): 1.0, (1, 2): 5.0, (0, 1): 2.0})
        # union against {2} takes the max, 5 >= min(1, 5)
        assert check_reducibility(Linkage.complete, {0}, {1}, {2}, g)

    @pytest.mark.parametrize("linkage", list(Linkage))
    def test_random_triples(self, linkage, rng):
        for _ in range(300):
            sizes = rng.integers(1, 4, size=3)
            total = int(sizes.sum())
            g = DissimilarityGraph(total)
            for i in range(total):
                for j in range(i + 1, total):
                    g.add_edge(i, j, float(rng.uniform()))
            a = range(0, sizes[0])
            b = range(sizes[0], sizes[0] + sizes[1])
            c = range(sizes[0] + sizes[1], total)
            assert check_reducibility(linkage, a, b, c, g)


@st.composite
def weight_lists(draw):
    n = draw(st.integers(2, 6))
    vals = draw(st.lists(st.floats(0.0, 10.0, allow_nan=False), min_size=n * (n - 1) // 2,
                         max_size=n * (n - 1) // 2))
    return n, vals


class TestPairKey:
    def test_orders_by_weight_first(self):
        assert pair_key(1.0, 5, 9) < pair_key(2.0, 0, 1)

    def test_tie_broken_by_sorted_tokens(self):
        assert pair_key(1.0, 9, 2) == (1.0, 2, 9)
        assert pair_key(1.0, 2, 9) < pair_key(1.0, 3, 4)

    @given(st.floats(0, 100, allow_nan=False), st.integers(0, 50), st.integers(0, 50),
           st.integers(0, 50))
    def test_union_key_never_below_children(self, w, ta, tb, tc):
        # token of a union is the max of its children's; with the weight held
        # fixed the union's key must not drop below either child's key
        merged = max(ta, tb)
        assert pair_key(w, merged, tc) >= min(pair_key(w, ta, tc), pair_key(w, tb, tc))


class TestAggregates:
    @given(st.lists(st.floats(0.001, 100, allow_nan=False), min_size=1, max_size=8))
    @settings(max_examples=200)
    def test_average_aggregate_is_order_independent(self, ws):
        code = Linkage.average.code
        forward = None
        for w in ws:
            forward = combine_agg(code, forward, edge_agg(code, w))
        backward = None
        for w in reversed(ws):
            backward = combine_agg(code, backward, edge_agg(code, w))
        assert agg_value(code, forward) == pytest.approx(agg_value(code, backward), rel=1e-12)
        assert forward[1] == len(ws)

    @pytest.mark.parametrize("linkage,expect", [(Linkage.single, 1.5), (Linkage.complete, 4.0)])
    def test_min_max_aggregates(self, linkage, expect):
        code = linkage.code
        agg = None
        for w in (4.0, 1.5, 2.0):
            agg = combine_agg(code, agg, edge_agg(code, w))
        assert agg_value(code, agg) == expect

    def test_average_matches_size_weighted_update_on_full_counts(self):
        # with every base pair present, (sum, count) aggregation reduces to
        # the size-weighted formula
        code = Linkage.average.code
        w_ac, m_ac = 2.0, 3   # |A|=3 singles against one point C
        w_bc, m_bc = 5.0, 2   # |B|=2
        agg = combine_agg(code, (w_ac * m_ac, m_ac), (w_bc * m_bc, m_bc))
        assert agg_value(code, agg) == pytest.approx(
            lance_williams_update(Linkage.average, w_ac, w_bc, 3, 2), rel=1e-15
        )
