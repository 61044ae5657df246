"""Empirical segment-to-segment flow transition statistics."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .network import RoadNetwork, Trajectory

log = logging.getLogger(__name__)


@dataclass
class TransitionStats:
    n_segments: int
    counts: dict[tuple[int, int], int] = field(default_factory=dict)
    rejected: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.outflow = np.zeros(self.n_segments, dtype=np.int64)
        for (a, _), c in self.counts.items():
            self.outflow[a] += c
        self._entropy = None

    def prob(self, a: int, b: int) -> float:
        """P(a -> b); 0 when ``a`` has no recorded outflow."""
        out = self.outflow[a]
        return self.counts.get((a, b), 0) / out if out > 0 else 0.0

    def distribution(self, a: int, net: RoadNetwork) -> dict[int, float]:
        return {b: self.prob(a, b) for b in net.intersecting(a)}

    def segment_entropy(self, net: RoadNetwork | None = None) -> np.ndarray:
        """Per-segment successor-choice entropy in nats (0 where outflow is 0).

        Only recorded successor pairs carry probability mass, so the sum over
        the intersecting set reduces to the recorded pairs.
        """
        if self._entropy is None:
            h = np.zeros(self.n_segments)
            for (a, _), c in sorted(self.counts.items()):
                if c > 0:
                    p = c / self.outflow[a]
                    h[a] -= p * np.log(p)
            self._entropy = h
        return self._entropy


def build_transition_stats(trajs, net: RoadNetwork) -> TransitionStats:
    """Count consecutive-pair flows; trajectories with an illegal hop are rejected whole."""
    counts: dict[tuple[int, int], int] = {}
    rejected = []
    for tr in trajs:
        segs = tr.segments
        if any(not (0 <= s < net.n_segments) for s in segs) or not net.is_valid_route(segs):
            rejected.append(tr.traj_id)
            continue
        for a, b in zip(segs[:-1], segs[1:]):
            counts[(a, b)] = counts.get((a, b), 0) + 1
    if rejected:
        log.warning("rejected %d trajectories with non-adjacent hops: %s", len(rejected), rejected[:10])
    return TransitionStats(net.n_segments, counts, rejected)


def transitions_from_counts(net: RoadNetwork, counts: dict[tuple[int, int], int]) -> TransitionStats:
    for a, b in counts:
        if not net.is_successor(a, b):
            raise ValueError(f"({a}, {b}) is not a successor pair")
    return TransitionStats(net.n_segments, dict(counts))


def trajectory_from_route(traj_id: int, route, net: RoadNetwork, speed: float = 10.0) -> Trajectory:
    """Dense trajectory along ``route`` with jitter-free timestamps."""
    times = np.concatenate([[0.0], np.cumsum(net.length[list(route)][:-1] / speed)]) if len(route) else []
    return Trajectory(traj_id, list(route), list(times))
