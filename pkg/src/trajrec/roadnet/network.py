"""Directed road-segment networks, trajectories and their CSV formats."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

NETWORK_HEADER = ["seg_id", "from_node", "to_node", "length_m", "x1", "y1", "x2", "y2"]
TRAJECTORY_HEADER = ["traj_id", "seq_idx", "seg_id", "timestamp_s"]


class NetworkFormatError(ValueError):
    """Malformed CSV content; the message carries the file line number."""


class NetworkValidationError(ValueError):
    """Well-formed rows that do not describe a usable network."""


@dataclass(eq=False)
class RoadNetwork:
    """Road segments as nodes of a directed graph.

    Segment ``b`` succeeds segment ``a`` when ``from_node[b] == to_node[a]``.
    The intersecting set of a segment is its successor set.
    """

    from_node: np.ndarray
    to_node: np.ndarray
    length: np.ndarray
    coords: np.ndarray  # (n, 4): x1, y1, x2, y2 in meters
    original_ids: np.ndarray | None = None
    successors: list[tuple[int, ...]] = field(init=False)
    predecessors: list[tuple[int, ...]] = field(init=False)

    def __post_init__(self):
        self.from_node = np.asarray(self.from_node, dtype=np.int64)
        self.to_node = np.asarray(self.to_node, dtype=np.int64)
        self.length = np.asarray(self.length, dtype=np.float64)
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 4)
        if self.original_ids is None:
            self.original_ids = np.arange(len(self.length), dtype=np.int64)
        leaving: dict[int, list[int]] = {}
        for seg, node in enumerate(self.from_node.tolist()):
            leaving.setdefault(node, []).append(seg)
        self.successors = [tuple(leaving.get(node, ())) for node in self.to_node.tolist()]
        preds: list[list[int]] = [[] for _ in range(self.n_segments)]
        for a, succ in enumerate(self.successors):
            for b in succ:
                preds[b].append(a)
        self.predecessors = [tuple(p) for p in preds]

    @property
    def n_segments(self) -> int:
        return int(self.length.shape[0])

    def intersecting(self, seg: int) -> tuple[int, ...]:
        return self.successors[seg]

    def is_successor(self, a: int, b: int) -> bool:
        return self.from_node[b] == self.to_node[a]

    def is_valid_route(self, route) -> bool:
        return all(self.is_successor(a, b) for a, b in zip(route[:-1], route[1:]))

    def route_length(self, route) -> float:
        return float(self.length[np.asarray(route, dtype=np.int64)].sum()) if len(route) else 0.0

    def n_edges(self) -> int:
        return sum(len(s) for s in self.successors)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RoadNetwork):
            return NotImplemented
        return (
            np.array_equal(self.from_node, other.from_node)
            and np.array_equal(self.to_node, other.to_node)
            and np.array_equal(self.length, other.length)
            and np.array_equal(self.coords, other.coords)
        )


@dataclass
class Trajectory:
    """Ordered (segment, timestamp) records; timestamps in seconds."""

    traj_id: int
    segments: list[int]
    timestamps: list[float]

    def __post_init__(self):
        self.segments = [int(s) for s in self.segments]
        self.timestamps = [float(t) for t in self.timestamps]
        if len(self.segments) != len(self.timestamps):
            raise ValueError(f"trajectory {self.traj_id}: {len(self.segments)} segments vs "
                             f"{len(self.timestamps)} timestamps")

    def __len__(self) -> int:
        return len(self.segments)

    def relative_times(self) -> np.ndarray:
        t = np.asarray(self.timestamps, dtype=np.float64)
        return t - t[0] if t.size else t


def validate_network(net: RoadNetwork) -> None:
    n = net.n_segments
    if n == 0:
        raise NetworkValidationError("network has no segments")
    bad = np.flatnonzero(~(net.length > 0) | ~np.isfinite(net.length))
    if bad.size:
        raise NetworkValidationError(f"segment {int(net.original_ids[bad[0]])}: length must be > 0")
    sources = set(net.from_node.tolist())
    for seg in range(n):
        if int(net.to_node[seg]) not in sources:
            raise NetworkValidationError(
                f"segment {int(net.original_ids[seg])}: to_node {int(net.to_node[seg])} is dangling "
                "(no segment leaves it)")


def load_network(path) -> RoadNetwork:
    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != NETWORK_HEADER:
            raise NetworkFormatError(f"{path}:1: expected header {','.join(NETWORK_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(NETWORK_HEADER):
                raise NetworkFormatError(f"{path}:{lineno}: expected {len(NETWORK_HEADER)} fields, got {len(row)}")
            try:
                seg, a, b = int(row[0]), int(row[1]), int(row[2])
                vals = [float(c) for c in row[3:]]
            except ValueError as exc:
                raise NetworkFormatError(f"{path}:{lineno}: {exc}") from None
            rows.append((seg, a, b, *vals))
    if not rows:
        raise NetworkValidationError(f"{path}: no segments")
    rows.sort(key=lambda r: r[0])
    ids = np.array([r[0] for r in rows], dtype=np.int64)
    if np.unique(ids).size != ids.size:
        raise NetworkValidationError(f"{path}: duplicate seg_id")
    net = RoadNetwork(
        from_node=[r[1] for r in rows],
        to_node=[r[2] for r in rows],
        length=[r[3] for r in rows],
        coords=[r[4:8] for r in rows],
        original_ids=ids,
    )
    validate_network(net)
    return net


def save_network(net: RoadNetwork, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(NETWORK_HEADER)
        for seg in range(net.n_segments):
            x1, y1, x2, y2 = net.coords[seg]
            w.writerow([seg, int(net.from_node[seg]), int(net.to_node[seg]), repr(float(net.length[seg])),
                        repr(float(x1)), repr(float(y1)), repr(float(x2)), repr(float(y2))])


def load_trajectories(path) -> list[Trajectory]:
    """Read ``traj_id,seq_idx,seg_id,timestamp_s`` rows; extra trailing columns are ignored.

    A blank timestamp (an imputed segment) loads as NaN.
    """
    path = Path(path)
    grouped: dict[int, list[tuple[int, int, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:4]] != TRAJECTORY_HEADER:
            raise NetworkFormatError(f"{path}:1: expected header {','.join(TRAJECTORY_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                tid, idx, seg = int(row[0]), int(row[1]), int(row[2])
                ts = float(row[3]) if row[3].strip() else float("nan")
            except (ValueError, IndexError) as exc:
                raise NetworkFormatError(f"{path}:{lineno}: {exc}") from None
            grouped.setdefault(tid, []).append((idx, seg, ts))
    out = []
    for tid in sorted(grouped):
        recs = sorted(grouped[tid])
        out.append(Trajectory(tid, [r[1] for r in recs], [r[2] for r in recs]))
    return out


def save_trajectories(trajs, path, sources: dict[int, list[str]] | None = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_HEADER + (["source"] if sources is not None else []))
        for tr in trajs:
            for idx, (seg, ts) in enumerate(zip(tr.segments, tr.timestamps)):
                row = [tr.traj_id, idx, seg, repr(ts) if np.isfinite(ts) else ""]
                if sources is not None:
                    row.append(sources[tr.traj_id][idx])
                w.writerow(row)
