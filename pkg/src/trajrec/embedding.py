"""Spatial token embedding and trainable sinusoidal time encoding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Module, Tensor, add, concat, cos, embedding, matmul, reshape, scale, sin


@dataclass(frozen=True)
class Vocab:
    """Segment ids ``0..n_segments-1`` followed by four reserved tokens."""

    n_segments: int

    @property
    def pad(self) -> int:
        return self.n_segments

    @property
    def mask(self) -> int:
        return self.n_segments + 1

    @property
    def bos(self) -> int:
        return self.n_segments + 2

    @property
    def eos(self) -> int:
        return self.n_segments + 3

    @property
    def size(self) -> int:
        return self.n_segments + 4

    def is_segment(self, ids) -> np.ndarray:
        ids = np.asarray(ids)
        return (ids >= 0) & (ids < self.n_segments)

    def check(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.size):
            bad = ids[(ids < 0) | (ids >= self.size)][0]
            raise IndexError(f"token {int(bad)} outside vocabulary of size {self.size}")
        return ids


def frequency_ladder(d_e: int) -> np.ndarray:
    """w_k = 10^(-4k/d_e) for k = 0..d_e/2-1."""
    k = np.arange(d_e // 2, dtype=np.float64)
    return 1.0 / 10.0 ** (4.0 * k / d_e)


class SpatialEmbedding(Module):
    def __init__(self, vocab: Vocab, d_e: int, rng: np.random.Generator):
        super().__init__()
        self.vocab = vocab
        table = rng.normal(0.0, 1.0 / np.sqrt(d_e), size=(vocab.size, d_e))
        table[vocab.pad] = 0.0
        self.table = Tensor(table, requires_grad=True)

    def __call__(self, ids) -> Tensor:
        return embedding(self.table, self.vocab.check(ids), padding_idx=self.vocab.pad)


class TemporalEncoder(Module):
    """TE(t) = [cos(w_1 t), sin(w_1 t), cos(w_2 t), ...] / sqrt(d_e)."""

    def __init__(self, d_e: int):
        super().__init__()
        if d_e % 2:
            raise ValueError(f"temporal encoding width must be even, got {d_e}")
        self.d_e = d_e
        self.w = Tensor(frequency_ladder(d_e), requires_grad=True)

    def __call__(self, t) -> Tensor:
        t = np.asarray(t, dtype=np.float64)
        if not np.all(np.isfinite(t)):
            raise ValueError("timestamps must be finite")
        half = self.d_e // 2
        arg = matmul(Tensor(t[..., None]), reshape(self.w, (1, half)))
        pair_shape = t.shape + (half, 1)
        both = concat([reshape(cos(arg), pair_shape), reshape(sin(arg), pair_shape)], axis=-1)
        return scale(reshape(both, t.shape + (self.d_e,)), 1.0 / np.sqrt(self.d_e))


def st_embed(spatial: SpatialEmbedding, temporal: TemporalEncoder, ids, times) -> tuple[Tensor, Tensor]:
    """Returns (X^st, X^s); time offsets are observed even at masked positions."""
    xs = spatial(ids)
    return add(xs, temporal(times)), xs
