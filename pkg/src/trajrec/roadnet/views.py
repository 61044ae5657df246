"""Route-distance and route-entropy view graphs over segment pairs.

Both views are averaged over the same ``k`` randomized routes per pair.
Only a candidate pair set is materialised (co-occurring pairs plus short
hop neighbourhoods); any other query answers with the missing-route fill,
which normalises to 1.0.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .network import RoadNetwork
from .routes import randomized_trees, within_hops
from .stats import TransitionStats

FILL_FACTOR = 1.05
VIEW_KINDS = ("distance", "entropy")


@dataclass
class ViewGraph:
    view_kind: str
    n_segments: int
    rows: np.ndarray
    cols: np.ndarray
    raw: np.ndarray
    normalized: np.ndarray
    missing_fill: float
    k: int = 3
    seed: int = 0
    K: int | None = None
    knn_edges: list[np.ndarray] | None = None
    _dense: dict = field(default_factory=dict, repr=False, compare=False)

    def _lookup(self, which: str, default: float) -> np.ndarray:
        if which not in self._dense:
            m = np.full((self.n_segments, self.n_segments), default)
            m[self.rows, self.cols] = getattr(self, which)
            self._dense[which] = m
        return self._dense[which]

    def dense_normalized(self) -> np.ndarray:
        return self._lookup("normalized", 1.0)

    def dense_raw(self) -> np.ndarray:
        return self._lookup("raw", self.missing_fill)

    def raw_value(self, i: int, j: int) -> float:
        return float(self.dense_raw()[i, j])

    def normalized_value(self, i: int, j: int) -> float:
        return float(self.dense_normalized()[i, j])

    def has_pair(self, i: int, j: int) -> bool:
        if "codes" not in self._dense:
            self._dense["codes"] = self.rows * self.n_segments + self.cols
        codes = self._dense["codes"]
        pos = int(np.searchsorted(codes, i * self.n_segments + j))
        return pos < codes.size and codes[pos] == i * self.n_segments + j


def candidate_pairs(net: RoadNetwork, trajs=(), hops: int = 4) -> np.ndarray:
    """Sorted unique (i, j) pairs: co-occurrence in any trajectory (both orders), self pairs,
    and every j within ``hops`` successor steps of i."""
    n = net.n_segments
    codes = [np.arange(n, dtype=np.int64) * (n + 1)]
    for tr in trajs:
        segs = np.unique(np.asarray(tr.segments, dtype=np.int64))
        codes.append((segs[:, None] * n + segs[None, :]).reshape(-1))
    if hops > 0:
        for i in range(n):
            near = np.fromiter(within_hops(net, i, hops), dtype=np.int64)
            codes.append(i * n + near)
    flat = np.unique(np.concatenate(codes))
    return np.stack([flat // n, flat % n], axis=1)


def _route_means(net: RoadNetwork, seg_entropy: np.ndarray, k: int, seed: int, pairs: np.ndarray):
    """Mean route length and mean accumulated entropy over ``k`` randomized routes, per pair.

    Unreachable pairs come back as NaN.
    """
    n = net.n_segments
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    sources = np.unique(pairs[:, 0])
    src_pos = {int(s): p for p, s in enumerate(sources)}
    sum_len = np.zeros(len(pairs))
    sum_ent = np.zeros(len(pairs))
    reachable = np.ones(len(pairs), dtype=bool)
    lengths = net.length.tolist()
    ents = seg_entropy.tolist()
    by_source: dict[int, np.ndarray] = {}
    for p, s in enumerate(pairs[:, 0].tolist()):
        by_source.setdefault(s, []).append(p)
    by_source = {s: np.asarray(v) for s, v in by_source.items()}
    for _, dist, pred in randomized_trees(net, sources, k, seed):
        for s, idx in by_source.items():
            row_d = dist[src_pos[s]]
            row_p = pred[src_pos[s]]
            acc_len = np.full(n, np.nan)
            acc_ent = np.full(n, np.nan)
            acc_len[s] = lengths[s]
            acc_ent[s] = ents[s]
            order = np.argsort(row_d, kind="stable")
            order = order[np.isfinite(row_d[order])]
            al = acc_len.tolist()
            ae = acc_ent.tolist()
            pr = row_p.tolist()
            for node in order.tolist():
                if node == s:
                    continue
                parent = pr[node]
                al[node] = al[parent] + lengths[node]
                ae[node] = ae[parent] + ents[node]
            targets = pairs[idx, 1]
            tl = np.asarray(al)[targets]
            te = np.asarray(ae)[targets]
            ok = np.isfinite(tl)
            reachable[idx] &= ok
            sum_len[idx] += np.where(ok, tl, 0.0)
            sum_ent[idx] += np.where(ok, te, 0.0)
    mean_len = np.where(reachable, sum_len / k, np.nan)
    mean_ent = np.where(reachable, sum_ent / k, np.nan)
    return mean_len, mean_ent


def _finalize(kind: str, n: int, pairs: np.ndarray, raw: np.ndarray, k: int, seed: int) -> ViewGraph:
    finite = np.isfinite(raw)
    top = float(raw[finite].max()) if finite.any() else 0.0
    fill = FILL_FACTOR * top if top > 0 else 1.0
    raw = np.where(finite, raw, fill)
    norm = normalize_columns(pairs[:, 1], raw, n, fill)
    return ViewGraph(kind, n, pairs[:, 0].copy(), pairs[:, 1].copy(), raw, norm, fill, k=k, seed=seed)


def normalize_columns(cols: np.ndarray, raw: np.ndarray, n: int, fill: float) -> np.ndarray:
    """Column-wise min-max over the stored entries. A constant column maps to 0, except
    fill entries, which always map to 1."""
    lo = np.full(n, np.inf)
    hi = np.full(n, -np.inf)
    np.minimum.at(lo, cols, raw)
    np.maximum.at(hi, cols, raw)
    span = (hi - lo)[cols]
    with np.errstate(invalid="ignore", divide="ignore"):
        norm = np.where(span > 0, (raw - lo[cols]) / np.where(span > 0, span, 1.0), 0.0)
    norm[raw == fill] = 1.0
    return np.clip(norm, 0.0, 1.0)


def build_view_graphs(net: RoadNetwork, stats: TransitionStats, k: int = 3, seed: int = 0,
                      pairs: np.ndarray | None = None) -> tuple[ViewGraph, ViewGraph]:
    """Distance and entropy views from one shared set of sampled routes."""
    if pairs is None:
        pairs = candidate_pairs(net)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    pairs = np.unique(pairs, axis=0)
    mean_len, mean_ent = _route_means(net, stats.segment_entropy(net), k, seed, pairs)
    n = net.n_segments
    return (_finalize("distance", n, pairs, mean_len, k, seed),
            _finalize("entropy", n, pairs, mean_ent, k, seed))


def build_distance_graph(net: RoadNetwork, k: int = 3, seed: int = 0, pairs=None,
                         stats: TransitionStats | None = None) -> ViewGraph:
    if stats is None:
        stats = TransitionStats(net.n_segments)
    return build_view_graphs(net, stats, k, seed, pairs)[0]


def build_entropy_graph(net: RoadNetwork, stats: TransitionStats, k: int = 3, seed: int = 0,
                        pairs=None) -> ViewGraph:
    return build_view_graphs(net, stats, k, seed, pairs)[1]


def sparsify_knn(vg: ViewGraph, K: int = 8) -> ViewGraph:
    """Keep, per row, the ``K`` stored neighbours with smallest normalised value (self excluded,
    ties to the smaller id)."""
    edges: list[list[int]] = [[] for _ in range(vg.n_segments)]
    keep = vg.rows != vg.cols
    order = np.lexsort((vg.cols[keep], vg.normalized[keep], vg.rows[keep]))
    rows, cols = vg.rows[keep][order], vg.cols[keep][order]
    for i, j in zip(rows.tolist(), cols.tolist()):
        if len(edges[i]) < K:
            edges[i].append(j)
    return replace(vg, K=K, knn_edges=[np.asarray(e, dtype=np.int64) for e in edges], _dense={})


def save_view_graph(vg: ViewGraph, path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "raw", "normalized"])
        for i, j, r, z in zip(vg.rows.tolist(), vg.cols.tolist(), vg.raw.tolist(), vg.normalized.tolist()):
            w.writerow([i, j, repr(r), repr(z)])
    meta = {"view_kind": vg.view_kind, "n_segments": vg.n_segments, "k": vg.k, "seed": vg.seed,
            "missing_fill": vg.missing_fill, "K": vg.K}
    _meta_path(path).write_text(json.dumps(meta, indent=2) + "\n")


def load_view_graph(path) -> ViewGraph:
    path = Path(path)
    meta = json.loads(_meta_path(path).read_text())
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    vg = ViewGraph(meta["view_kind"], int(meta["n_segments"]), data[:, 0].astype(np.int64),
                   data[:, 1].astype(np.int64), data[:, 2].copy(), data[:, 3].copy(),
                   float(meta["missing_fill"]), k=int(meta["k"]), seed=int(meta["seed"]))
    if meta.get("K") is not None:
        vg = sparsify_knn(vg, int(meta["K"]))
    return vg


def _meta_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")
