import numpy as np
import pytest

from locadmm.network import GroundTruth, MeasurementSet, NetworkGraph


def make_graph(dim, edges, anchors, num_nodes=None):
    """Small hand-built graph; anchors maps id -> position."""
    if num_nodes is None:
        num_nodes = max(max(e) for e in edges) + 1
    return NetworkGraph.build(dim, num_nodes, anchors, edges)


def exact_measurements(graph, positions):
    """Noise-free ranges from a position array."""
    pos = np.asarray(positions, dtype=float)
    return MeasurementSet(
        {
            (i, j): float(np.linalg.norm(pos[i] - pos[j]))
            for i, j in graph.edge_list
        }
    )


def random_connected_graph(rng, num_nodes, dim=2, num_anchors=1, extra_edges=0.3):
    """Random spanning tree plus extra edges; anchors at random ids."""
    positions = rng.uniform(0.0, 1.0, (num_nodes, dim))
    edges = set()
    order = rng.permutation(num_nodes)
    for k in range(1, num_nodes):
        j = order[k]
        i = order[int(rng.integers(0, k))]
        edges.add((min(int(i), int(j)), max(int(i), int(j))))
    want_extra = int(extra_edges * num_nodes)
    for _ in range(want_extra):
        i, j = rng.integers(0, num_nodes, 2)
        if i != j:
            edges.add((min(int(i), int(j)), max(int(i), int(j))))
    anchor_ids = rng.permutation(num_nodes)[:num_anchors]
    anchors = {int(a): positions[int(a)] for a in anchor_ids}
    graph = NetworkGraph.build(dim, num_nodes, anchors, edges)
    return graph, GroundTruth(positions)


@pytest.fixture
def triangle():
    """Zero-noise triangle: two anchors, one free node, exact ranges."""
    positions = np.array([[0.0, 0.0], [1.0, 0.0], [0.4, 0.8]])
    graph = make_graph(
        2,
        [(0, 1), (0, 2), (1, 2)],
        {0: positions[0], 1: positions[1]},
    )
    truth = GroundTruth(positions)
    return graph, truth, exact_measurements(graph, positions)
