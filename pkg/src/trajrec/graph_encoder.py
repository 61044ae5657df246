"""Per-view graph attention over kNN view graphs and the trajectory-aware view mixer.

GAT outputs are computed lazily: only for the segments present in a batch,
using their stored kNN neighbourhoods.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import (
    Module,
    Tensor,
    add,
    bmm,
    concat,
    embedding,
    expand,
    index,
    leaky_relu,
    matmul,
    mul,
    reshape,
    softmax,
    tanh,
    uniform_init,
)
from .roadnet import ViewGraph, sparsify_knn

LEAKY_SLOPE = 0.2


@dataclass
class Neighbourhoods:
    """Padded neighbour table: column 0 is the node itself."""

    ids: np.ndarray  # (n, K+1) global segment ids
    mask: np.ndarray  # (n, K+1) bool

    @classmethod
    def from_view(cls, view: ViewGraph, K: int) -> Neighbourhoods:
        if view.knn_edges is None or view.K != K:
            view = sparsify_knn(view, K)
        n = view.n_segments
        ids = np.repeat(np.arange(n, dtype=np.int64)[:, None], K + 1, axis=1)
        mask = np.zeros((n, K + 1), dtype=bool)
        mask[:, 0] = True
        for i, nb in enumerate(view.knn_edges):
            ids[i, 1:1 + len(nb)] = nb
            mask[i, 1:1 + len(nb)] = True
        return cls(ids, mask)


class GraphContext:
    """Read-only graph inputs shared by every batch: kNN tables and dense normalised views."""

    def __init__(self, distance: ViewGraph, entropy: ViewGraph, K: int = 8):
        if distance.n_segments != entropy.n_segments:
            raise ValueError("view graphs disagree on segment count")
        self.n_segments = distance.n_segments
        self.K = K
        self.views = (distance, entropy)
        self.neighbourhoods = tuple(Neighbourhoods.from_view(v, K) for v in self.views)
        self.dense = tuple(v.dense_normalized() for v in self.views)


class GATView(Module):
    """Single-layer, multi-head graph attention; head outputs concatenated back to ``d_e``."""

    def __init__(self, d_e: int, rng: np.random.Generator, heads: int = 2):
        super().__init__()
        if d_e % heads:
            raise ValueError(f"width {d_e} not divisible by {heads} heads")
        self.heads = heads
        self.d_head = d_e // heads
        self.W = uniform_init(rng, (d_e, d_e))
        self.a_self = uniform_init(rng, (heads, self.d_head))
        self.a_nbr = uniform_init(rng, (heads, self.d_head))

    def __call__(self, table: Tensor, centers: np.ndarray, hood: Neighbourhoods):
        """GAT outputs for ``centers`` (global ids). Returns (g (n_c, d_e), attention (n_c, heads, K+1))."""
        nbr = hood.ids[centers]
        keep = hood.mask[centers]
        nodes, local = np.unique(np.concatenate([centers, nbr.reshape(-1)]), return_inverse=True)
        c_loc = local[:len(centers)]
        n_loc = local[len(centers):].reshape(nbr.shape)
        hw = matmul(embedding(table, nodes), self.W)
        n_c, width = nbr.shape
        outs, atts = [], []
        for h in range(self.heads):
            hw_h = index(hw, np.s_[:, h * self.d_head:(h + 1) * self.d_head])
            s_self = reshape(matmul(hw_h, reshape(index(self.a_self, h), (self.d_head, 1))), (len(nodes),))
            s_nbr = reshape(matmul(hw_h, reshape(index(self.a_nbr, h), (self.d_head, 1))), (len(nodes),))
            e = add(expand(index(s_self, c_loc), 1, width), index(s_nbr, n_loc))
            att = softmax(leaky_relu(e, LEAKY_SLOPE), mask=keep)
            feats = index(hw_h, n_loc)
            outs.append(reshape(bmm(reshape(att, (n_c, 1, width)), feats), (n_c, self.d_head)))
            atts.append(att.data)
        return concat(outs, axis=-1), np.stack(atts, axis=1)


def trajectory_context(xst: Tensor, complexity, valid: np.ndarray) -> Tensor:
    """q_S = complexity * mean of X^st rows over valid (non-PAD) positions; shape (b, d_e)."""
    valid = np.asarray(valid, dtype=np.float64)
    if valid.ndim == 1:
        xst = reshape(xst, (1,) + xst.shape)
        valid = valid[None]
    counts = valid.sum(axis=1, keepdims=True)
    if np.any(counts == 0):
        raise ValueError("trajectory context needs at least one position")
    c = np.asarray(complexity, dtype=np.float64).reshape(-1, 1)
    w = (c * valid / counts)[:, None, :]
    b, _, d = xst.shape
    return reshape(bmm(Tensor(w), xst), (b, d))


class ViewAggregator(Module):
    """w_r = v . tanh(g^r W_r + q W); alpha = softmax_r(w); g_hat = sum_r alpha_r g^r."""

    def __init__(self, d_e: int, rng: np.random.Generator, n_views: int = 2):
        super().__init__()
        self.n_views = n_views
        self.v = uniform_init(rng, (d_e,))
        self.W_views = [uniform_init(rng, (d_e, d_e)) for _ in range(n_views)]
        for r, w in enumerate(self.W_views):
            setattr(self, f"W_view{r}", w)
        self.W_ctx = uniform_init(rng, (d_e, d_e))

    def __call__(self, gs: list[Tensor], q: Tensor):
        """``gs``: per-view (..., d_e); ``q``: matching leading shape or broadcastable over positions.

        Returns (g_hat, alpha) with alpha of shape (..., n_views).
        """
        if len(gs) != self.n_views:
            raise ValueError(f"expected {self.n_views} views, got {len(gs)}")
        d = self.v.shape[0]
        qw = matmul(q, self.W_ctx)
        if qw.shape != gs[0].shape:
            qw = expand(qw, 1, gs[0].shape[1])
        v_col = reshape(self.v, (d, 1))
        logits = [matmul(tanh(add(matmul(g, w), qw)), v_col) for g, w in zip(gs, self.W_views)]
        alpha = softmax(concat(logits, axis=-1))
        g_hat = None
        for r, g in enumerate(gs):
            term = mul(expand(index(alpha, np.s_[..., r]), alpha.ndim - 1, d), g)
            g_hat = term if g_hat is None else add(g_hat, term)
        return g_hat, alpha
