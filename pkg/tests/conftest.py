import sys

import networkx as nx_graph
import numpy as np
import pytest

from trajrec.roadnet import RoadNetwork, Trajectory
from trajrec.synthgen import gen_grid_network


def line_network(lengths=(100.0, 100.0, 100.0)):
    """s0: n0->n1, s1: n1->n2, ...; a straight one-way street."""
    k = len(lengths)
    coords = [(100.0 * i, 0.0, 100.0 * (i + 1), 0.0) for i in range(k)]
    return RoadNetwork(list(range(k)), list(range(1, k + 1)), list(lengths), coords)


def fork_network():
    """s0: n0->n1 then a fork: s1: n1->n2, s2: n1->n3."""
    return RoadNetwork([0, 1, 1], [1, 2, 3], [100.0, 100.0, 100.0],
                       [(0, 0, 100, 0), (100, 0, 200, 0), (100, 0, 100, 100)])


def segment_digraph(net):
    """Independent networkx view: node = segment, edge a->b weighted by length[b]."""
    g = nx_graph.DiGraph()
    g.add_nodes_from(range(net.n_segments))
    for a in range(net.n_segments):
        for b in range(net.n_segments):
            if net.from_node[b] == net.to_node[a]:
                g.add_edge(a, b, weight=float(net.length[b]))
    return g


def oracle_shortest_length(net, i, j):
    g = segment_digraph(net)
    try:
        return float(net.length[i]) + nx_graph.dijkstra_path_length(g, i, j)
    except nx_graph.NetworkXNoPath:
        return float("inf")


def traj(tid, segs, dt=10.0):
    return Trajectory(tid, list(segs), [dt * k for k in range(len(segs))])


def grid_seg(net, a, b):
    """Segment id of the directed street from node a to node b."""
    hit = np.flatnonzero((net.from_node == a) & (net.to_node == b))
    assert hit.size == 1, (a, b)
    return int(hit[0])


def node_route(net, nodes):
    return [grid_seg(net, a, b) for a, b in zip(nodes[:-1], nodes[1:])]


@pytest.fixture
def grid3():
    return gen_grid_network(3, 3, 100.0)


@pytest.fixture
def grid5():
    return gen_grid_network(5, 5, 100.0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
