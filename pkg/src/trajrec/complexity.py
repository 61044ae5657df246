"""Trajectory complexity: detour score, entropy score and their normalised blend."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .roadnet import RoadNetwork, TransitionStats, Trajectory, ViewGraph
from .roadnet.routes import all_shortest_lengths

log = logging.getLogger(__name__)

LEVELS = ("Low", "Mid", "High")


class UnreachableError(ValueError):
    pass


@dataclass
class ComplexityProfile:
    ds: float
    es: float
    ds_norm: float
    es_norm: float
    complexity: float
    level: str
    loop: bool = False


@dataclass
class CorpusCalibration:
    ds_min: float
    ds_max: float
    es_min: float
    es_max: float
    q25: float
    q75: float
    theta: float
    mu: float = 0.5
    nu: float = 0.5

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> CorpusCalibration:
        return cls(**json.loads(Path(path).read_text()))

    def level(self, complexity: float) -> str:
        if complexity <= self.q25:
            return "Low"
        if complexity > self.q75:
            return "High"
        return "Mid"


def detour_score(traj: Trajectory, net: RoadNetwork) -> float:
    """Route length over the shortest origin-destination route length."""
    if len(traj) == 0:
        raise ValueError(f"trajectory {traj.traj_id} is empty")
    o, d = traj.segments[0], traj.segments[-1]
    shortest = all_shortest_lengths(net)[o, d]
    if not np.isfinite(shortest):
        raise UnreachableError(f"trajectory {traj.traj_id}: segment {d} unreachable from {o}")
    return float(net.route_length(traj.segments) / shortest)


def sparse_route_length(traj: Trajectory, net: RoadNetwork, distance_view: ViewGraph | None) -> float:
    """Route length of a sparse trajectory, stitched from mean sampled-route lengths between
    consecutive observations (each shared observed segment counted once).

    Pairs the view does not store fall back to the shortest route.
    """
    segs = traj.segments
    sp = all_shortest_lengths(net)
    total = float(net.length[segs[0]])
    for a, b in zip(segs[:-1], segs[1:]):
        if distance_view is not None and distance_view.has_pair(a, b):
            leg = distance_view.raw_value(a, b)
        else:
            leg = sp[a, b]
        if not np.isfinite(leg):
            raise UnreachableError(f"trajectory {traj.traj_id}: segment {b} unreachable from {a}")
        total += leg - float(net.length[a])
    return total


def sparse_detour_score(traj: Trajectory, net: RoadNetwork, distance_view: ViewGraph | None) -> float:
    o, d = traj.segments[0], traj.segments[-1]
    shortest = all_shortest_lengths(net)[o, d]
    if not np.isfinite(shortest):
        raise UnreachableError(f"trajectory {traj.traj_id}: segment {d} unreachable from {o}")
    return sparse_route_length(traj, net, distance_view) / shortest


def entropy_score(traj: Trajectory, stats: TransitionStats) -> float:
    """Mean successor entropy (nats) over the visited segments."""
    if len(traj) == 0:
        raise ValueError(f"trajectory {traj.traj_id} is empty")
    return float(stats.segment_entropy()[np.asarray(traj.segments)].mean())


def _minmax(x: float, lo: float, hi: float) -> float:
    if hi <= lo:
        return 0.0
    return float(min(1.0, max(0.0, (x - lo) / (hi - lo))))


def _combine(ds: float, es: float, calib: CorpusCalibration) -> tuple[float, float, float]:
    dn = _minmax(ds, calib.ds_min, calib.ds_max)
    en = _minmax(es, calib.es_min, calib.es_max)
    return dn, en, calib.mu * dn + calib.nu * en


def calibrate(corpus, net: RoadNetwork, stats: TransitionStats, mu: float = 0.5,
              nu: float = 0.5) -> CorpusCalibration:
    """Normalisation bounds, complexity quartiles, and theta = q75 over a training corpus."""
    corpus = list(corpus)
    if not corpus:
        raise ValueError("calibration corpus is empty")
    ds = np.array([detour_score(t, net) for t in corpus])
    es = np.array([entropy_score(t, stats) for t in corpus])
    calib = CorpusCalibration(float(ds.min()), float(ds.max()), float(es.min()), float(es.max()),
                              0.0, 0.0, 0.0, mu, nu)
    c = np.array([_combine(a, b, calib)[2] for a, b in zip(ds, es)])
    calib.q25, calib.q75 = (float(q) for q in np.quantile(c, [0.25, 0.75]))
    calib.theta = calib.q75
    return calib


def score(traj: Trajectory, net: RoadNetwork, stats: TransitionStats, calib: CorpusCalibration,
          sparse: bool = False, distance_view: ViewGraph | None = None) -> ComplexityProfile:
    """Complexity profile of one trajectory; ``sparse=True`` stitches the route length of a
    subsampled input from the distance view instead of summing segment lengths."""
    loop = len(traj) > 1 and traj.segments[0] == traj.segments[-1]
    if loop:
        log.warning("trajectory %s starts and ends on segment %s; detour score uses the "
                    "single-segment route", traj.traj_id, traj.segments[0])
    ds = sparse_detour_score(traj, net, distance_view) if sparse else detour_score(traj, net)
    es = entropy_score(traj, stats)
    dn, en, c = _combine(ds, es, calib)
    return ComplexityProfile(ds, es, dn, en, c, calib.level(c), loop)


def complexity_of(traj: Trajectory, net: RoadNetwork, stats: TransitionStats,
                  calib: CorpusCalibration, **kw) -> float:
    return score(traj, net, stats, calib, **kw).complexity
