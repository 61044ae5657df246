"""Recovery metrics: set precision/recall/F1, one-way distance, merge distance."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .roadnet import RoadNetwork

LEVELS = ("Low", "Mid", "High")
EVAL_COLUMNS = ("traj_id", "p", "r", "f1", "owd", "md", "complexity", "level")


def prf1(pred, truth) -> tuple[float, float, float]:
    """Precision, recall, F1 over segment-id sets."""
    truth = set(truth)
    if not truth:
        raise ValueError("empty ground truth")
    pred = set(pred)
    hit = len(pred & truth)
    p = hit / len(pred) if pred else 0.0
    r = hit / len(truth)
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


def point_sequence(net: RoadNetwork, segments, sample_step: float | None = None) -> np.ndarray:
    """Segment endpoints in order, consecutive duplicates collapsed; optional interior points every
    ``sample_step`` metres."""
    pts = []
    for s in segments:
        x1, y1, x2, y2 = net.coords[s]
        pts.append((x1, y1))
        if sample_step:
            n = int(np.floor(net.length[s] / sample_step))
            for k in range(1, n):
                f = k * sample_step / net.length[s]
                if f < 1.0:
                    pts.append((x1 + f * (x2 - x1), y1 + f * (y2 - y1)))
        pts.append((x2, y2))
    arr = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    if len(arr) > 1:
        keep = np.ones(len(arr), dtype=bool)
        keep[1:] = np.any(arr[1:] != arr[:-1], axis=1)
        arr = arr[keep]
    return arr


def _pairwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.hypot(a[:, None, 0] - b[None, :, 0], a[:, None, 1] - b[None, :, 1])


def owd(a, b, factor: float = 0.5) -> float:
    """factor * (mean over a of distance to nearest b point + mean over b of distance to nearest a point).

    ``factor=0.5`` is the symmetric average; ``factor=1`` gives the plain sum used by some authors.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("owd needs non-empty point sequences")
    d = _pairwise(a, b)
    return factor * (float(d.min(axis=1).mean()) + float(d.min(axis=0).mean()))


def route_length(points: np.ndarray) -> float:
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    return float(np.hypot(*np.diff(p, axis=0).T).sum()) if len(p) > 1 else 0.0


def shortest_merge_length(a, b) -> float:
    """Length of the shortest polyline that contains ``a`` and ``b`` as order-preserving subsequences."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    n, m = len(a), len(b)
    da = np.hypot(*np.diff(a, axis=0).T) if n > 1 else np.zeros(0)
    db = np.hypot(*np.diff(b, axis=0).T) if m > 1 else np.zeros(0)
    ab = _pairwise(a, b)
    inf = np.inf
    # end_a[i, j]: consumed a[:i], b[:j], last point a[i-1]; end_b likewise with b[j-1]
    end_a = np.full((n + 1, m + 1), inf)
    end_b = np.full((n + 1, m + 1), inf)
    end_a[1, 0] = 0.0
    end_b[0, 1] = 0.0
    for i in range(n + 1):
        for j in range(m + 1):
            if i >= 1 and (i, j) != (1, 0):
                best = inf
                if i >= 2:
                    best = end_a[i - 1, j] + da[i - 2]
                if j >= 1:
                    best = min(best, end_b[i - 1, j] + ab[i - 1, j - 1])
                end_a[i, j] = best
            if j >= 1 and (i, j) != (0, 1):
                best = inf
                if j >= 2:
                    best = end_b[i, j - 1] + db[j - 2]
                if i >= 1:
                    best = min(best, end_a[i, j - 1] + ab[i - 1, j - 1])
                end_b[i, j] = best
    return float(min(end_a[n, m], end_b[n, m]))


def merge_distance(a, b) -> float:
    """2 * RL(shortest merge) / (RL(a) + RL(b)) - 1."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("merge distance needs non-empty point sequences")
    total = route_length(a) + route_length(b)
    if total == 0:
        if len(a) == 1 and len(b) == 1 and np.array_equal(a, b):
            return 0.0
        raise ValueError("merge distance undefined for two zero-length trajectories")
    return 2.0 * shortest_merge_length(a, b) / total - 1.0


# ---------------------------------------------------------------- evaluation tables

@dataclass
class EvalRow:
    traj_id: int
    p: float
    r: float
    f1: float
    owd: float
    md: float
    complexity: float
    level: str


def evaluate_pair(net: RoadNetwork, traj_id: int, pred, truth, complexity: float, level: str,
                  sample_step: float | None = None) -> EvalRow:
    p, r, f1 = prf1(pred, truth)
    tp = point_sequence(net, truth, sample_step)
    if len(pred):
        pp = point_sequence(net, pred, sample_step)
        o, md = owd(pp, tp), merge_distance(pp, tp)
    else:
        o, md = float("nan"), float("nan")
    return EvalRow(traj_id, p, r, f1, o, md, complexity, level)


def aggregate_by_level(rows: list[EvalRow]) -> list[dict]:
    out = []
    for lvl in LEVELS + ("All",):
        sel = [r for r in rows if lvl == "All" or r.level == lvl]
        if not sel:
            continue
        rec = {"level": lvl, "n": len(sel)}
        for k in ("p", "r", "f1", "owd", "md"):
            vals = np.array([getattr(r, k) for r in sel], dtype=np.float64)
            rec[k] = float(np.nanmean(vals)) if np.isfinite(vals).any() else float("nan")
        out.append(rec)
    return out


def write_eval_csv(rows: list[EvalRow], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EVAL_COLUMNS)
        for r in rows:
            w.writerow([r.traj_id] + [repr(float(v)) for v in (r.p, r.r, r.f1, r.owd, r.md, r.complexity)]
                       + [r.level])


def write_aggregate_csv(agg: list[dict], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "n", "p", "r", "f1", "owd", "md"])
        for a in agg:
            w.writerow([a["level"], a["n"]] + [repr(float(a[k])) for k in ("p", "r", "f1", "owd", "md")])
