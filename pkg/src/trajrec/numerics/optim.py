"""Adam with bias correction."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


class ParamGroup:
    """Named trainable tensors plus their Adam moments."""

    def __init__(self, params: dict[str, Tensor]):
        self.params = dict(params)
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.step = 0

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def adam_step(pg: ParamGroup, lr: float = 1e-4, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
    """One update; parameters without a gradient this step are left untouched."""
    b1, b2 = betas
    for name, p in pg.params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
    pg.step += 1
    c1 = 1.0 - b1 ** pg.step
    c2 = 1.0 - b2 ** pg.step
    for name, p in pg.params.items():
        if p.grad is None:
            continue
        g = p.grad
        m = pg.m[name]
        v = pg.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.grad = None


def clip_grad_norm(pg: ParamGroup, max_norm: float) -> float:
    """Rescale all gradients so their joint L2 norm is at most ``max_norm``; returns the norm before."""
    sq = sum(float(np.sum(p.grad * p.grad)) for p in pg.params.values() if p.grad is not None)
    norm = float(np.sqrt(sq))
    if max_norm > 0 and norm > max_norm:
        f = max_norm / norm
        for p in pg.params.values():
            if p.grad is not None:
                p.grad = p.grad * f
    return norm
