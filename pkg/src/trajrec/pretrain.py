"""Masked-segment pretraining of the trajectory encoder."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embedding import Vocab
from .encoder import ModelConfig, TrajectoryEncoder, make_batch
from .graph_encoder import GraphContext
from .numerics import ParamGroup, Tensor, adam_step, cross_entropy, index, load_checkpoint, reshape, save_checkpoint
from .roadnet import Trajectory

log = logging.getLogger(__name__)

META = "meta."


class TrainingError(RuntimeError):
    pass


@dataclass
class PretrainConfig:
    epochs: int = 10
    batch_size: int = 16
    mask_ratio: float = 2 / 3
    lr: float = 1e-3
    seed: int = 0


@dataclass
class MaskedEntry:
    traj_id: int
    tokens: np.ndarray
    timestamps: np.ndarray
    positions: np.ndarray  # sorted masked positions
    targets: np.ndarray  # original ids at ``positions``


def n_masked(length: int, ratio: float) -> int:
    return min(length, max(1, math.floor(ratio * length + 1e-9)))


def mask_sequence(traj: Trajectory, ratio: float, seed: int, epoch: int = 0, vocab: Vocab | None = None):
    """Replace a uniformly drawn position subset of size floor(ratio*|S|) (at least 1) by MASK.

    Returns None (with a warning) for trajectories shorter than 2.
    """
    if len(traj) < 2:
        log.warning("trajectory %s has %d segments; not masked", traj.traj_id, len(traj))
        return None
    vocab = vocab or Vocab(max(traj.segments) + 1)
    rng = np.random.default_rng([seed, epoch, traj.traj_id])
    segs = np.asarray(traj.segments, dtype=np.int64)
    pos = np.sort(rng.choice(len(segs), size=n_masked(len(segs), ratio), replace=False))
    tokens = segs.copy()
    tokens[pos] = vocab.mask
    return MaskedEntry(traj.traj_id, tokens, np.asarray(traj.timestamps, dtype=np.float64), pos, segs[pos])


def mlm_loss(model: TrajectoryEncoder, entries: list[MaskedEntry], complexity, ctx: GraphContext, theta: float):
    batch = make_batch([e.tokens for e in entries], [e.timestamps for e in entries], complexity,
                       model.vocab, model.config.max_len)
    out = model(batch, ctx, theta)
    L = batch.ids.shape[1]
    rows = np.concatenate([r * L + e.positions for r, e in enumerate(entries)])
    targets = np.concatenate([e.targets for e in entries])
    flat = reshape(out.Z, (-1, out.Z.shape[-1]))
    return cross_entropy(model.mlm_logits(index(flat, rows)), targets)


def epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Seeded per-epoch shuffle; the trailing partial batch is dropped unless it is the only one."""
    order = np.random.default_rng([seed, epoch, 0x5EED]).permutation(n)
    if n < batch_size:
        return [order]
    return [order[i:i + batch_size] for i in range(0, n - batch_size + 1, batch_size)]


def pretrain(model: TrajectoryEncoder, corpus: list[Trajectory], complexity, ctx: GraphContext, theta: float,
             cfg: PretrainConfig, loss_log=None, checkpoint=None) -> list[tuple[int, int, float]]:
    """Train every encoder parameter plus the MLM head. Returns rows (epoch, step, loss)."""
    complexity = np.asarray(complexity, dtype=np.float64)
    usable = [i for i, t in enumerate(corpus) if len(t) >= 2]
    if len(usable) < len(corpus):
        log.warning("skipping %d trajectories shorter than 2 segments", len(corpus) - len(usable))
    if not usable:
        raise ValueError("no trajectory long enough to mask")
    group = ParamGroup(model.named_parameters())
    rows: list[tuple[int, int, float]] = []
    step = 0
    for epoch in range(cfg.epochs):
        for bi, sel in enumerate(epoch_batches(len(usable), cfg.batch_size, cfg.seed, epoch)):
            idx = [usable[i] for i in sel]
            entries = [mask_sequence(corpus[i], cfg.mask_ratio, cfg.seed, epoch, model.vocab) for i in idx]
            loss = mlm_loss(model, entries, complexity[idx], ctx, theta)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch} batch {bi}")
            loss.backward()
            adam_step(group, lr=cfg.lr)
            rows.append((epoch, step, value))
            step += 1
        log.info("epoch %d mean loss %.4f", epoch, epoch_means(rows)[-1])
    if loss_log is not None:
        write_loss_log(rows, loss_log)
    if checkpoint is not None:
        save_model(model, checkpoint)
    return rows


def epoch_means(rows) -> list[float]:
    by_epoch: dict[int, list[float]] = {}
    for e, _, v in rows:
        by_epoch.setdefault(e, []).append(v)
    return [float(np.mean(by_epoch[e])) for e in sorted(by_epoch)]


def write_loss_log(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "step", "loss"])
        for e, s, v in rows:
            w.writerow([e, s, repr(float(v))])


# ---------------------------------------------------------------- checkpoints

def save_model(model, path, extra: dict[str, np.ndarray] | None = None) -> None:
    """Parameters plus the model config and vocabulary size as ``meta.*`` scalars."""
    tensors = dict(model.state_dict())
    meta = dict(model.config.to_dict(), n_segments=model.vocab.n_segments)
    for k, v in meta.items():
        tensors[META + k] = np.asarray(float(v))
    tensors.update(extra or {})
    save_checkpoint(Path(path), tensors)


def split_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = load_checkpoint(Path(path))
    meta = {k[len(META):]: v.item() for k, v in raw.items() if k.startswith(META)}
    params = {k: v for k, v in raw.items() if not k.startswith(META)}
    return meta, params


def meta_config(meta: dict) -> ModelConfig:
    cfg = ModelConfig()
    vals = {}
    for k, default in cfg.to_dict().items():
        if k in meta:
            vals[k] = type(default)(meta[k]) if not isinstance(default, bool) else bool(meta[k])
    return ModelConfig.from_dict(vals)


def load_encoder(path) -> TrajectoryEncoder:
    meta, params = split_checkpoint(path)
    model = TrajectoryEncoder(int(meta["n_segments"]), meta_config(meta))
    own = {k: v for k, v in params.items() if k in model.named_parameters()}
    model.load_state_dict(own)
    return model


__all__ = [
    "MaskedEntry",
    "PretrainConfig",
    "TrainingError",
    "epoch_batches",
    "epoch_means",
    "load_encoder",
    "mask_sequence",
    "mlm_loss",
    "n_masked",
    "pretrain",
    "save_model",
    "split_checkpoint",
    "write_loss_log",
]
