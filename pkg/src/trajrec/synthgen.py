"""Synthetic grid road networks and trajectory corpora with tunable complexity."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import dijkstra

from .roadnet import RoadNetwork, Trajectory
from .roadnet.routes import segment_graph


@dataclass
class GenConfig:
    n: int = 8
    m: int = 8
    spacing: float = 100.0
    count: int = 2000
    p_detour: float = 0.5
    # probability, at each intersection of a detour walk, of ignoring progress toward D
    turn_bias: float = 0.5
    speed: float = 10.0
    jitter: float = 0.1
    min_segments: int = 3
    max_retries: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.n < 2 or self.m < 2:
            raise ValueError("grid needs n, m >= 2")
        for name in ("p_detour", "turn_bias", "jitter"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


def gen_grid_network(n: int, m: int, spacing: float = 100.0) -> RoadNetwork:
    """n x m lattice of intersections; each street becomes two opposite segments."""
    if n < 2 or m < 2:
        raise ValueError("grid needs n, m >= 2")

    def xy(node):
        r, c = divmod(node, m)
        return c * spacing, r * spacing

    src, dst = [], []
    for r in range(n):
        for c in range(m):
            u = r * m + c
            if c + 1 < m:
                src += [u, u + 1]
                dst += [u + 1, u]
            if r + 1 < n:
                src += [u, u + m]
                dst += [u + m, u]
    coords = [(*xy(a), *xy(b)) for a, b in zip(src, dst)]
    return RoadNetwork(src, dst, np.full(len(src), float(spacing)), coords)


def _all_shortest(net: RoadNetwork):
    dist, pred = dijkstra(segment_graph(net), return_predecessors=True)
    return dist + net.length[:, None], pred


def _path(pred: np.ndarray, i: int, j: int) -> list[int]:
    route = [j]
    while route[-1] != i:
        route.append(int(pred[i, route[-1]]))
    return route[::-1]


def _walk(net: RoadNetwork, o: int, d: int, sp: np.ndarray, turn_bias: float, cap: float,
          rng: np.random.Generator) -> list[int] | None:
    remaining = sp[:, d] - net.length  # distance still to cover once a segment is finished
    route = [o]
    total = float(net.length[o])
    cur = o
    while cur != d:
        succ = net.successors[cur]
        options = [b for b in succ if not (net.to_node[b] == net.from_node[cur])] or list(succ)
        if rng.random() < turn_bias:
            nxt = options[rng.integers(len(options))]
        else:
            closer = [b for b in options if remaining[b] < remaining[cur]] or options
            nxt = closer[rng.integers(len(closer))]
        route.append(int(nxt))
        total += float(net.length[nxt])
        if total > cap:
            return None
        cur = nxt
    return route


def _timestamps(net: RoadNetwork, route, speed: float, jitter: float, rng) -> list[float]:
    hops = net.length[route[:-1]] / speed * rng.uniform(1.0 - jitter, 1.0 + jitter, size=len(route) - 1)
    return np.concatenate([[0.0], np.cumsum(hops)]).tolist()


def gen_trajectories(net: RoadNetwork, cfg: GenConfig) -> list[Trajectory]:
    """Dense trajectories: shortest routes with probability 1 - p_detour, otherwise a
    progress-biased random walk that is redrawn when it exceeds 4x the shortest length."""
    sp, pred = _all_shortest(net)
    if not np.all(np.isfinite(sp)):
        raise ValueError("network is not strongly connected")
    out = []
    nseg = net.n_segments
    for tid in range(cfg.count):
        rng = np.random.default_rng([cfg.seed, tid])
        while True:
            o, d = (int(x) for x in rng.choice(nseg, size=2, replace=False))
            shortest = _path(pred, o, d)
            if len(shortest) >= cfg.min_segments:
                break
        route = shortest
        if rng.random() < cfg.p_detour:
            cap = 4.0 * sp[o, d]
            for _ in range(cfg.max_retries):
                walk = _walk(net, o, d, sp, cfg.turn_bias, cap, rng)
                if walk is not None:
                    route = walk
                    break
        out.append(Trajectory(tid, route, _timestamps(net, route, cfg.speed, cfg.jitter, rng)))
    return out


def kept_positions(traj: Trajectory, keep_ratio: float, seed: int) -> list[int]:
    """Indices kept by ``sparsify``: ceil(keep_ratio * |S|), always the first and last."""
    n = len(traj)
    if n < 3:
        return list(range(n))
    keep = min(n, max(2, math.ceil(keep_ratio * n - 1e-9)))
    rng = np.random.default_rng([int(seed), int(traj.traj_id)])
    inner = np.sort(rng.choice(np.arange(1, n - 1), size=keep - 2, replace=False))
    return [0, *inner.tolist(), n - 1]


def sparsify(traj: Trajectory, keep_ratio: float, seed: int) -> Trajectory:
    idx = kept_positions(traj, keep_ratio, seed)
    return Trajectory(traj.traj_id, [traj.segments[i] for i in idx], [traj.timestamps[i] for i in idx])
