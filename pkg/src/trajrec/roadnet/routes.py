"""Shortest and randomized-shortest routes over the segment graph.

Moving from segment ``a`` onto successor ``b`` costs ``length[b]``, so a
route's Dijkstra cost plus the first segment's length is its route length.
Randomized routes rescale every transition by an i.i.d. Uniform(1, 2)
factor and take the shortest path under the perturbed costs; replicate
``r`` draws its factors from ``default_rng([seed, r])`` so that every
source sees the same perturbed graph in a given replicate.
"""
from __future__ import annotations

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .network import RoadNetwork


def _edge_arrays(net: RoadNetwork) -> tuple[np.ndarray, np.ndarray]:
    src = np.array([a for a, succ in enumerate(net.successors) for _ in succ], dtype=np.int64)
    dst = np.array([b for succ in net.successors for b in succ], dtype=np.int64)
    return src, dst


def segment_graph(net: RoadNetwork, factors: np.ndarray | None = None) -> csr_matrix:
    src, dst = _edge_arrays(net)
    w = net.length[dst].copy()
    if factors is not None:
        w = w * factors
    n = net.n_segments
    return csr_matrix((w, (src, dst)), shape=(n, n))


def replicate_factors(net: RoadNetwork, seed: int, replicate: int) -> np.ndarray:
    rng = np.random.default_rng([int(seed), int(replicate)])
    return rng.uniform(1.0, 2.0, size=net.n_edges())


def _walk_back(pred_row: np.ndarray, i: int, j: int) -> list[int]:
    route = [j]
    node = j
    while node != i:
        node = int(pred_row[node])
        if node < 0:
            return []
        route.append(node)
    route.reverse()
    return route


def shortest_route(net: RoadNetwork, i: int, j: int) -> tuple[list[int], float]:
    """Shortest route from segment ``i`` to ``j`` and its length (both ends included).

    Returns ``([], inf)`` when ``j`` is unreachable.
    """
    if i == j:
        return [i], float(net.length[i])
    dist, pred = dijkstra(segment_graph(net), indices=i, return_predecessors=True)
    if not np.isfinite(dist[j]):
        return [], float("inf")
    return _walk_back(pred, i, j), float(net.length[i] + dist[j])


def all_shortest_lengths(net: RoadNetwork) -> np.ndarray:
    """(n, n) matrix of shortest route lengths, cached on the network object."""
    cached = getattr(net, "_all_shortest", None)
    if cached is None:
        cached = dijkstra(segment_graph(net)) + net.length[:, None]
        net._all_shortest = cached
    return cached


def shortest_lengths_from(net: RoadNetwork, i: int) -> np.ndarray:
    """Shortest route length from ``i`` to every segment (inf when unreachable)."""
    dist = dijkstra(segment_graph(net), indices=i)
    return dist + net.length[i]


def sample_routes(net: RoadNetwork, i: int, j: int, k: int = 3, seed: int = 0) -> list[list[int]]:
    """``k`` randomized shortest routes from ``i`` to ``j`` (duplicates allowed).

    Empty list when no route exists.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if i == j:
        return [[i] for _ in range(k)]
    routes = []
    for r in range(k):
        g = segment_graph(net, replicate_factors(net, seed, r))
        dist, pred = dijkstra(g, indices=i, return_predecessors=True)
        if not np.isfinite(dist[j]):
            return []
        routes.append(_walk_back(pred, i, j))
    return routes


def randomized_trees(net: RoadNetwork, sources: np.ndarray, k: int, seed: int):
    """Yield (replicate, dist, pred) for all ``sources`` at once, one perturbed graph per replicate."""
    for r in range(k):
        g = segment_graph(net, replicate_factors(net, seed, r))
        dist, pred = dijkstra(g, indices=sources, return_predecessors=True)
        yield r, dist, pred


def within_hops(net: RoadNetwork, i: int, hops: int) -> set[int]:
    """Segments reachable from ``i`` in at most ``hops`` successor steps (``i`` included)."""
    seen = {i}
    frontier = [i]
    for _ in range(hops):
        nxt = []
        for a in frontier:
            for b in net.successors[a]:
                if b not in seen:
                    seen.add(b)
                    nxt.append(b)
        frontier = nxt
    return seen
