"""Frequency baseline: fill each gap with the most probable route under transition counts."""
from __future__ import annotations

import heapq
import logging
import math

import numpy as np

from .roadnet import RoadNetwork, TransitionStats, Trajectory

log = logging.getLogger(__name__)

EPS = 1e-6


def transition_weight(stats: TransitionStats, a: int, b: int) -> float:
    """-log P(b | a), with unseen transitions costing ln(1/eps)."""
    p = stats.prob(a, b)
    return -math.log(p) if p > 0 else math.log(1.0 / EPS)


def most_likely_route(net: RoadNetwork, stats: TransitionStats, a: int, c: int) -> list[int] | None:
    """Segments strictly between ``a`` and ``c`` on the max-probability route, or None if unreachable.

    Ties on probability go to the shorter route, then to the lexicographically smaller id sequence.
    """
    heap = [(0.0, 0.0, (a,))]
    done = set()
    while heap:
        cost, length, path = heapq.heappop(heap)
        node = path[-1]
        if node == c and len(path) > 1:
            return list(path[1:-1])
        if node in done:
            continue
        done.add(node)
        for b in net.successors[node]:
            b = int(b)
            if b in done and b != c:
                continue
            heapq.heappush(heap, (cost + transition_weight(stats, node, b), length + float(net.length[b]), path + (b,)))
    return None


def frequency_recover(sparse: Trajectory, net: RoadNetwork, stats: TransitionStats,
                      unfilled: list | None = None) -> Trajectory:
    """Observed segments in order with the most likely route inserted between each consecutive pair.

    Unreachable gaps are left open and appended to ``unfilled`` as (traj_id, a, c).
    """
    if len(sparse) == 0:
        raise ValueError("empty input trajectory")
    segs = [sparse.segments[0]]
    times = [sparse.timestamps[0]]
    for a, c, tc in zip(sparse.segments[:-1], sparse.segments[1:], sparse.timestamps[1:]):
        if not net.is_successor(a, c):
            mid = most_likely_route(net, stats, a, c)
            if mid is None:
                log.warning("trajectory %s: no route from %d to %d; gap left open", sparse.traj_id, a, c)
                if unfilled is not None:
                    unfilled.append((sparse.traj_id, a, c))
                mid = []
            segs.extend(mid)
            times.extend([float("nan")] * len(mid))
        segs.append(c)
        times.append(tc)
    return Trajectory(sparse.traj_id, segs, list(np.asarray(times, dtype=np.float64)))
