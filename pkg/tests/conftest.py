import numpy as np
import pytest

from rac.graph import DissimilarityGraph
from rac.graph_io import PointSet, build_knn_graph


def random_dense_graph(n, rng):
    g = DissimilarityGraph(n)
    for i in range(n):
        for j in range(i + 1, n):
            g.add_edge(i, j, float(rng.uniform()))
    return g


def random_sparse_graph(n, rng, p=0.35, integer_weights=False):
    g = DissimilarityGraph(n)
    for i in range(n):
        for j in range(i + 1, n):
            if rng.uniform() < p:
                w = float(rng.integers(1, 5)) if integer_weights else float(rng.uniform())
                g.add_edge(i, j, w)
    return g


def random_knn_instance(n, k, rng, dim=8):
    points = PointSet(rng.uniform(size=(n, dim)))
    return build_knn_graph(points, k)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
