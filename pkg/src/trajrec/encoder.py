"""Hybrid embedding, complexity-gated soft-mask self-attention, and the encoder stack."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .embedding import SpatialEmbedding, TemporalEncoder, Vocab, st_embed
from .graph_encoder import GATView, GraphContext, ViewAggregator, trajectory_context
from .numerics import (
    Module,
    Tensor,
    add,
    add_bias,
    bmm,
    concat,
    expand,
    index,
    layer_norm,
    matmul,
    mul,
    relu,
    reshape,
    scale,
    softmax,
    softplus,
    transpose,
    uniform_init,
)

DELTA_INIT = -4.0


@dataclass
class ModelConfig:
    d_e: int = 32
    d_h: int = 64
    n_layers: int = 2
    n_heads: int = 4
    buckets: int = 32
    K: int = 8
    gat_heads: int = 2
    d_ff: int = 128
    max_len: int = 256
    soft_mask: bool = True
    dec_hidden: int = 64
    dec_layers: int = 2
    dec_attention: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.d_h % 2 or self.d_e % 2:
            raise ValueError("d_e and d_h must be even")
        if self.d_h % self.n_heads:
            raise ValueError(f"d_h={self.d_h} not divisible by n_heads={self.n_heads}")
        if self.d_e % self.gat_heads:
            raise ValueError(f"d_e={self.d_e} not divisible by gat_heads={self.gat_heads}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


# ---------------------------------------------------------------- batching

@dataclass
class EncoderBatch:
    ids: np.ndarray  # (b, L) int, PAD-filled
    times: np.ndarray  # (b, L) seconds from the first record
    valid: np.ndarray  # (b, L) bool, False at PAD
    complexity: np.ndarray  # (b,)

    @property
    def size(self) -> int:
        return self.ids.shape[0]


def make_batch(seqs, times, complexity, vocab: Vocab, max_len: int | None = None) -> EncoderBatch:
    if not seqs:
        raise ValueError("empty batch")
    L = max(len(s) for s in seqs)
    if max_len is not None and L > max_len:
        raise ValueError(f"sequence of length {L} exceeds max_len={max_len}")
    b = len(seqs)
    ids = np.full((b, L), vocab.pad, dtype=np.int64)
    tt = np.zeros((b, L))
    for r, (s, t) in enumerate(zip(seqs, times)):
        if len(s) == 0:
            raise ValueError("empty sequence in batch")
        ids[r, :len(s)] = vocab.check(s)
        t = np.asarray(t, dtype=np.float64)
        tt[r, :len(s)] = t - t[0]
    return EncoderBatch(ids, tt, ids != vocab.pad, np.asarray(complexity, dtype=np.float64).reshape(b))


# ---------------------------------------------------------------- soft mask

def bucket_of(values, B: int) -> np.ndarray:
    """floor(v * B) clamped into [0, B-1]."""
    return np.clip(np.floor(np.asarray(values, dtype=np.float64) * B), 0, B - 1).astype(np.int64)


class SoftMaskBias(Module):
    """b(v) = sum_{q <= bucket(v)} softplus(delta_q): non-decreasing in v for any delta."""

    def __init__(self, B: int = 32):
        super().__init__()
        self.B = B
        self.delta = Tensor(np.full(B, DELTA_INIT), requires_grad=True)
        self._upper = np.triu(np.ones((B, B)))

    def table(self) -> Tensor:
        return reshape(matmul(reshape(softplus(self.delta), (1, self.B)), Tensor(self._upper)), (self.B,))

    def __call__(self, values) -> Tensor:
        return index(self.table(), bucket_of(values, self.B))


def pair_values(ctx: GraphContext, ids: np.ndarray, pair_ok: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalised distance / entropy view values for every position pair; 0 where ``pair_ok`` is False."""
    safe = np.where(ids < ctx.n_segments, ids, 0)
    out = []
    for dense in ctx.dense:
        v = dense[safe[:, :, None], safe[:, None, :]]
        out.append(np.where(pair_ok, v, 0.0))
    return out[0], out[1]


# ---------------------------------------------------------------- transformer

class EncoderLayer(Module):
    """Pre-norm block: h + MHA(LN(h)) then h + FFN(LN(h))."""

    def __init__(self, d_h: int, n_heads: int, d_ff: int, rng: np.random.Generator):
        super().__init__()
        self.n_heads = n_heads
        self.d_k = d_h // n_heads
        self.ln1_g = Tensor(np.ones(d_h), requires_grad=True)
        self.ln1_b = Tensor(np.zeros(d_h), requires_grad=True)
        self.W_Q = uniform_init(rng, (d_h, d_h))
        self.W_K = uniform_init(rng, (d_h, d_h))
        self.W_V = uniform_init(rng, (d_h, d_h))
        self.W_O = uniform_init(rng, (d_h, d_h))
        self.ln2_g = Tensor(np.ones(d_h), requires_grad=True)
        self.ln2_b = Tensor(np.zeros(d_h), requires_grad=True)
        self.W_1 = uniform_init(rng, (d_h, d_ff))
        self.b_1 = Tensor(np.zeros(d_ff), requires_grad=True)
        self.W_2 = uniform_init(rng, (d_ff, d_h))
        self.b_2 = Tensor(np.zeros(d_h), requires_grad=True)

    def _heads(self, x: Tensor, b: int, L: int) -> Tensor:
        x = transpose(reshape(x, (b, L, self.n_heads, self.d_k)), (0, 2, 1, 3))
        return reshape(x, (b * self.n_heads, L, self.d_k))

    def attention(self, h: Tensor, key_mask: np.ndarray, bias: Tensor | None):
        """Returns (context (b, L, d_h), weights (b, m, L, L))."""
        b, L, d_h = h.shape
        m = self.n_heads
        q = self._heads(matmul(h, self.W_Q), b, L)
        k = self._heads(matmul(h, self.W_K), b, L)
        v = self._heads(matmul(h, self.W_V), b, L)
        scores = reshape(scale(bmm(q, transpose(k, (0, 2, 1))), 1.0 / np.sqrt(self.d_k)), (b, m, L, L))
        if bias is not None:
            scores = add(scores, expand(bias, 1, m))
        weights = softmax(scores, mask=key_mask[:, None, None, :])
        ctx = bmm(reshape(weights, (b * m, L, L)), v)
        ctx = reshape(transpose(reshape(ctx, (b, m, L, self.d_k)), (0, 2, 1, 3)), (b, L, d_h))
        return matmul(ctx, self.W_O), weights

    def __call__(self, h: Tensor, key_mask: np.ndarray, bias: Tensor | None):
        att, weights = self.attention(layer_norm(h, self.ln1_g, self.ln1_b), key_mask, bias)
        h = add(h, att)
        x = layer_norm(h, self.ln2_g, self.ln2_b)
        ff = add_bias(matmul(relu(add_bias(matmul(x, self.W_1), self.b_1)), self.W_2), self.b_2)
        return add(h, ff), weights


@dataclass
class EncoderOutput:
    Z: Tensor  # (b, L, d_h)
    attention: list[np.ndarray]  # per layer (b, m, L, L)
    alpha: np.ndarray  # (b, L, 2) view weights; zero rows at non-segment positions
    gated: np.ndarray  # (b,) bool, soft mask active


class TrajectoryEncoder(Module):
    """Spatiotemporal + multi-view graph hybrid embedding fed through a soft-mask transformer."""

    def __init__(self, n_segments: int, config: ModelConfig | None = None):
        super().__init__()
        cfg = config or ModelConfig()
        self.config = cfg
        self.vocab = Vocab(n_segments)
        rng = np.random.default_rng([cfg.seed, 1])
        self.spatial = SpatialEmbedding(self.vocab, cfg.d_e, rng)
        self.temporal = TemporalEncoder(cfg.d_e)
        self.gat_distance = GATView(cfg.d_e, rng, cfg.gat_heads)
        self.gat_entropy = GATView(cfg.d_e, rng, cfg.gat_heads)
        self.aggregator = ViewAggregator(cfg.d_e, rng)
        self.W_st = uniform_init(rng, (cfg.d_e, cfg.d_h // 2))
        self.W_g = uniform_init(rng, (cfg.d_e, cfg.d_h // 2))
        self.layers = [EncoderLayer(cfg.d_h, cfg.n_heads, cfg.d_ff, rng) for _ in range(cfg.n_layers)]
        for i, layer in enumerate(self.layers):
            setattr(self, f"layer{i}", layer)
        self.soft_distance = SoftMaskBias(cfg.buckets)
        self.soft_entropy = SoftMaskBias(cfg.buckets)
        self.W_mlm = uniform_init(rng, (cfg.d_h, self.vocab.size))
        self.b_mlm = Tensor(np.zeros(self.vocab.size), requires_grad=True)

    def encoder_parameters(self) -> dict[str, Tensor]:
        """Everything except the MLM head."""
        return {k: v for k, v in self.named_parameters().items() if not k.endswith("_mlm")}

    # -- pieces --------------------------------------------------------------

    def graph_embed(self, ids: np.ndarray, ctx: GraphContext, q: Tensor):
        """View-mixed graph embedding per position; zero at MASK/PAD/BOS/EOS positions."""
        b, L = ids.shape
        d = self.config.d_e
        real = self.vocab.is_segment(ids)
        centers = np.unique(ids[real])
        if centers.size == 0:
            return Tensor(np.zeros((b, L, d))), np.zeros((b, L, 2))
        pos = np.where(real, np.searchsorted(centers, np.where(real, ids, centers[0])), 0)
        gs = []
        for gat, hood in zip((self.gat_distance, self.gat_entropy), ctx.neighbourhoods):
            g, _ = gat(self.spatial.table, centers, hood)
            gs.append(index(g, pos))
        g_hat, alpha = self.aggregator(gs, q)
        keep = np.repeat(real[:, :, None].astype(np.float64), d, axis=2)
        return mul(g_hat, Tensor(keep)), alpha.data * real[:, :, None]

    def soft_mask(self, batch: EncoderBatch, ctx: GraphContext, theta: float):
        """Summed distance + entropy bias (b, L, L), or None when no trajectory passes the gate."""
        gated = batch.complexity > theta
        if not (self.config.soft_mask and gated.any()):
            return None, gated
        real = self.vocab.is_segment(batch.ids)
        pair_ok = real[:, :, None] & real[:, None, :] & gated[:, None, None]
        jd, je = pair_values(ctx, batch.ids, pair_ok)
        bias = add(self.soft_distance(jd), self.soft_entropy(je))
        return mul(bias, Tensor(pair_ok.astype(np.float64))), gated

    def hybrid(self, batch: EncoderBatch, ctx: GraphContext):
        xst, _ = st_embed(self.spatial, self.temporal, batch.ids, batch.times)
        q = trajectory_context(xst, batch.complexity, batch.valid)
        g_hat, alpha = self.graph_embed(batch.ids, ctx, q)
        return concat([matmul(xst, self.W_st), matmul(g_hat, self.W_g)], axis=-1), alpha

    def __call__(self, batch: EncoderBatch, ctx: GraphContext, theta: float) -> EncoderOutput:
        if batch.ids.shape[1] > self.config.max_len:
            raise ValueError(f"sequence length {batch.ids.shape[1]} exceeds max_len={self.config.max_len}")
        h, alpha = self.hybrid(batch, ctx)
        bias, gated = self.soft_mask(batch, ctx, theta)
        maps = []
        for layer in self.layers:
            h, w = layer(h, batch.valid, bias)
            maps.append(w.data)
        return EncoderOutput(h, maps, alpha, gated)

    def mlm_logits(self, Z: Tensor) -> Tensor:
        return add_bias(matmul(Z, self.W_mlm), self.b_mlm)
