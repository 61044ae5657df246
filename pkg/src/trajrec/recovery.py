"""GRU decoder over encoder states: fine-tuning with early stopping and greedy/beam recovery."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .complexity import CorpusCalibration, score
from .encoder import EncoderBatch, ModelConfig, TrajectoryEncoder, make_batch
from .graph_encoder import GraphContext
from .numerics import (
    Module,
    ParamGroup,
    Tensor,
    adam_step,
    add,
    add_bias,
    bmm,
    clip_grad_norm,
    concat,
    cross_entropy,
    embedding,
    index,
    matmul,
    mul,
    reshape,
    sigmoid,
    softmax,
    tanh,
    uniform_init,
)
from .pretrain import TrainingError, load_encoder, meta_config, save_model, split_checkpoint
from .roadnet import RoadNetwork, TransitionStats, Trajectory, ViewGraph
from .synthgen import sparsify

log = logging.getLogger(__name__)


@dataclass
class FinetuneConfig:
    max_epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    patience: int = 3
    val_fraction: float = 0.1
    keep_ratio: float = 2 / 3
    freeze_encoder: bool = False
    grad_clip: float = 1.0
    seed: int = 0


class GRUCell(Module):
    def __init__(self, d_in: int, d_hid: int, rng: np.random.Generator):
        super().__init__()
        self.d_hid = d_hid
        self.W_x = uniform_init(rng, (d_in, 3 * d_hid), fan_in=d_hid)
        self.W_h = uniform_init(rng, (d_hid, 3 * d_hid), fan_in=d_hid)
        self.b_x = Tensor(np.zeros(3 * d_hid), requires_grad=True)
        self.b_h = Tensor(np.zeros(3 * d_hid), requires_grad=True)

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        H = self.d_hid
        gx = add_bias(matmul(x, self.W_x), self.b_x)
        gh = add_bias(matmul(h, self.W_h), self.b_h)
        r = sigmoid(add(index(gx, np.s_[:, :H]), index(gh, np.s_[:, :H])))
        z = sigmoid(add(index(gx, np.s_[:, H:2 * H]), index(gh, np.s_[:, H:2 * H])))
        n = tanh(add(index(gx, np.s_[:, 2 * H:]), mul(r, index(gh, np.s_[:, 2 * H:]))))
        # (1 - z) * n + z * h == n + z * (h - n)
        return add(n, mul(z, add(h, -n)))


class GRUDecoder(Module):
    """Stacked GRU; each step reads [SE(previous token) || attention context over Z_S]."""

    def __init__(self, cfg: ModelConfig, vocab_size: int, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        H, L = cfg.dec_hidden, cfg.dec_layers
        d_in = cfg.d_e + (cfg.d_h if cfg.dec_attention else 0)
        self.W_init = uniform_init(rng, (cfg.d_h, L * H))
        self.b_init = Tensor(np.zeros(L * H), requires_grad=True)
        self.cells = [GRUCell(d_in if i == 0 else H, H, rng) for i in range(L)]
        for i, c in enumerate(self.cells):
            setattr(self, f"gru{i}", c)
        if cfg.dec_attention:
            self.W_att = uniform_init(rng, (H, cfg.d_h))
        self.W_out = uniform_init(rng, (H, vocab_size))
        self.b_out = Tensor(np.zeros(vocab_size), requires_grad=True)

    def initial_state(self, Z: Tensor, valid: np.ndarray) -> list[Tensor]:
        b, L, d = Z.shape
        w = valid / valid.sum(axis=1, keepdims=True)
        pooled = reshape(bmm(Tensor(w[:, None, :]), Z), (b, d))
        h0 = tanh(add_bias(matmul(pooled, self.W_init), self.b_init))
        H = self.cfg.dec_hidden
        return [index(h0, np.s_[:, i * H:(i + 1) * H]) for i in range(self.cfg.dec_layers)]

    def context(self, Z: Tensor, valid: np.ndarray, h_top: Tensor) -> Tensor:
        b, L, d = Z.shape
        q = reshape(matmul(h_top, self.W_att), (b, d, 1))
        a = softmax(reshape(bmm(Z, q), (b, L)), mask=valid)
        return reshape(bmm(reshape(a, (b, 1, L)), Z), (b, d))

    def step(self, x: Tensor, state: list[Tensor], Z: Tensor, valid: np.ndarray) -> list[Tensor]:
        if self.cfg.dec_attention:
            x = concat([x, self.context(Z, valid, state[-1])], axis=-1)
        new = []
        for cell, h in zip(self.cells, state):
            x = cell(x, h)
            new.append(x)
        return new

    def logits(self, h_top: Tensor) -> Tensor:
        return add_bias(matmul(h_top, self.W_out), self.b_out)


class RecoveryModel(Module):
    """Encoder plus decoder; the decoder reads the encoder's spatial embedding table."""

    def __init__(self, encoder: TrajectoryEncoder):
        super().__init__()
        self.encoder = encoder
        rng = np.random.default_rng([encoder.config.seed, 2])
        self.decoder = GRUDecoder(encoder.config, encoder.vocab.size, rng)

    @property
    def vocab(self):
        return self.encoder.vocab

    @property
    def config(self) -> ModelConfig:
        return self.encoder.config

    def trainable(self, freeze_encoder: bool) -> dict[str, Tensor]:
        params = self.named_parameters()
        if freeze_encoder:
            return {k: v for k, v in params.items() if k.startswith("decoder.")}
        return {k: v for k, v in params.items() if not k.endswith("_mlm")}

    def embed_tokens(self, ids) -> Tensor:
        return embedding(self.encoder.spatial.table, ids, padding_idx=self.vocab.pad)

    def teacher_forced_loss(self, batch: EncoderBatch, targets: list[list[int]], ctx: GraphContext,
                            theta: float) -> Tensor:
        v = self.vocab
        out = self.encoder(batch, ctx, theta)
        b = batch.size
        T = max(len(t) for t in targets) + 1
        inp = np.full((b, T), v.pad, dtype=np.int64)
        tgt = np.full((b, T), v.pad, dtype=np.int64)
        for r, t in enumerate(targets):
            inp[r, 0] = v.bos
            inp[r, 1:len(t) + 1] = t
            tgt[r, :len(t)] = t
            tgt[r, len(t)] = v.eos
        E = self.embed_tokens(inp)
        state = self.decoder.initial_state(out.Z, batch.valid)
        tops = []
        for t in range(T):
            state = self.decoder.step(index(E, np.s_[:, t]), state, out.Z, batch.valid)
            tops.append(reshape(state[-1], (b, 1, self.config.dec_hidden)))
        hs = reshape(concat(tops, axis=1), (b * T, self.config.dec_hidden))
        flat_t = tgt.reshape(-1)
        keep = np.flatnonzero(flat_t != v.pad)
        return cross_entropy(self.decoder.logits(index(hs, keep)), flat_t[keep])

    def _banned(self) -> np.ndarray:
        v = self.vocab
        return np.array([v.pad, v.mask, v.bos])

    def greedy(self, batch: EncoderBatch, ctx: GraphContext, theta: float, max_len: int) -> list[list[int]]:
        v = self.vocab
        out = self.encoder(batch, ctx, theta)
        b = batch.size
        state = self.decoder.initial_state(out.Z, batch.valid)
        prev = np.full(b, v.bos, dtype=np.int64)
        done = np.zeros(b, dtype=bool)
        seqs: list[list[int]] = [[] for _ in range(b)]
        banned = self._banned()
        for _ in range(max_len):
            state = self.decoder.step(self.embed_tokens(prev), state, out.Z, batch.valid)
            logits = self.decoder.logits(state[-1]).data.copy()
            logits[:, banned] = -np.inf
            nxt = np.argmax(logits, axis=1)
            for r in np.flatnonzero(~done):
                if nxt[r] == v.eos:
                    done[r] = True
                else:
                    seqs[r].append(int(nxt[r]))
            if done.all():
                break
            prev = np.where(done, v.pad, nxt)
        return seqs

    def beam(self, batch: EncoderBatch, ctx: GraphContext, theta: float, max_len: int, width: int) -> list[list[int]]:
        """Beam search per trajectory; score = summed log-probability, ties to the smaller token path."""
        v = self.vocab
        out = self.encoder(batch, ctx, theta)
        Zs = out.Z.data
        results = []
        banned = self._banned()
        for r in range(batch.size):
            Z = Tensor(Zs[r:r + 1])
            valid = batch.valid[r:r + 1]
            state = [s.data for s in self.decoder.initial_state(Z, valid)]
            beams = [((), 0.0, state)]
            finished: list[tuple[float, tuple]] = []
            for _ in range(max_len):
                cand = []
                for toks, lp, st in beams:
                    prev = np.array([toks[-1] if toks else v.bos])
                    ns = self.decoder.step(self.embed_tokens(prev), [Tensor(s) for s in st], Z, valid)
                    logits = self.decoder.logits(ns[-1]).data[0].copy()
                    logits[banned] = -np.inf
                    logp = logits - np.logaddexp.reduce(logits[np.isfinite(logits)])
                    top = np.argsort(-logp, kind="stable")[:width]
                    for tok in top.tolist():
                        cand.append((lp + float(logp[tok]), toks + (tok,), [s.data for s in ns]))
                cand.sort(key=lambda c: (-c[0], c[1]))
                beams = []
                for lp, toks, st in cand:
                    if toks[-1] == v.eos:
                        finished.append((lp, toks[:-1]))
                    else:
                        beams.append((toks, lp, st))
                    if len(beams) == width:
                        break
                if not beams or (finished and max(f[0] for f in finished) >= beams[0][1]):
                    break
            finished.extend((lp, toks) for toks, lp, _ in beams)
            finished.sort(key=lambda f: (-f[0], f[1]))
            results.append(list(finished[0][1]))
        return results


# ---------------------------------------------------------------- data

@dataclass
class RecoveryExample:
    traj_id: int
    sparse: Trajectory
    target: list[int]
    complexity: float


def input_complexity(sparse: Trajectory, net: RoadNetwork, stats: TransitionStats, calib: CorpusCalibration,
                     distance_view: ViewGraph | None) -> float:
    """Complexity recomputed on the sparse input, as at inference time."""
    if len(sparse) == 0:
        raise ValueError("empty input trajectory")
    return score(sparse, net, stats, calib, sparse=True, distance_view=distance_view).complexity


def make_examples(dense: list[Trajectory], net, stats, calib, distance_view, keep_ratio: float,
                  seed: int) -> list[RecoveryExample]:
    out = []
    for t in dense:
        if len(t) < 3:
            continue
        s = sparsify(t, keep_ratio, seed)
        out.append(RecoveryExample(t.traj_id, s, list(t.segments),
                                   input_complexity(s, net, stats, calib, distance_view)))
    return out


def _batch(model: RecoveryModel, exs: list[RecoveryExample]) -> EncoderBatch:
    return make_batch([e.sparse.segments for e in exs], [e.sparse.timestamps for e in exs],
                      [e.complexity for e in exs], model.vocab, model.config.max_len)


def split_validation(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.random.default_rng([seed, 0xF1]).permutation(n)
    n_val = int(round(fraction * n)) if n > 1 else 0
    n_val = min(max(n_val, 1 if fraction > 0 and n > 1 else 0), n - 1)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def validation_loss(model: RecoveryModel, exs, ctx, theta, batch_size: int) -> float:
    total, count = 0.0, 0
    for i in range(0, len(exs), batch_size):
        chunk = exs[i:i + batch_size]
        n_tok = sum(len(e.target) + 1 for e in chunk)
        total += model.teacher_forced_loss(_batch(model, chunk), [e.target for e in chunk], ctx, theta).item() * n_tok
        count += n_tok
    return total / count


@dataclass
class FinetuneResult:
    rows: list[tuple[int, int, float]]  # (epoch, step, train loss)
    val_losses: list[float]
    best_epoch: int
    stopped_early: bool


def finetune(model: RecoveryModel, examples: list[RecoveryExample], ctx: GraphContext, theta: float,
             cfg: FinetuneConfig, loss_log=None) -> FinetuneResult:
    """Teacher-forced cross-entropy with early stopping on a held-out split; the best state is restored."""
    from .pretrain import epoch_batches, write_loss_log

    if not examples:
        raise ValueError("no recovery examples")
    tr_idx, va_idx = split_validation(len(examples), cfg.val_fraction, cfg.seed)
    train = [examples[i] for i in tr_idx]
    val = [examples[i] for i in va_idx]
    group = ParamGroup(model.trainable(cfg.freeze_encoder))
    rows, val_losses = [], []
    best, best_state, best_epoch, bad = np.inf, model.state_dict(), -1, 0
    step = 0
    stopped = False
    for epoch in range(cfg.max_epochs):
        for bi, sel in enumerate(epoch_batches(len(train), cfg.batch_size, cfg.seed, epoch)):
            chunk = [train[i] for i in sel]
            loss = model.teacher_forced_loss(_batch(model, chunk), [e.target for e in chunk], ctx, theta)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch} batch {bi}")
            loss.backward()
            clip_grad_norm(group, cfg.grad_clip)
            adam_step(group, lr=cfg.lr)
            model.zero_grad()
            rows.append((epoch, step, value))
            step += 1
        if not val:
            best_state, best_epoch = model.state_dict(), epoch
            continue
        vl = validation_loss(model, val, ctx, theta, cfg.batch_size)
        val_losses.append(vl)
        log.info("finetune epoch %d train %.4f val %.4f", epoch, np.mean([r[2] for r in rows if r[0] == epoch]), vl)
        if vl < best:
            best, best_state, best_epoch, bad = vl, model.state_dict(), epoch, 0
        else:
            bad += 1
            if bad >= cfg.patience:
                stopped = True
                break
    model.load_state_dict(best_state)
    if loss_log is not None:
        write_loss_log(rows, loss_log)
    return FinetuneResult(rows, val_losses, best_epoch, stopped)


def recover(model: RecoveryModel, inputs: list[Trajectory], complexity, ctx: GraphContext, theta: float,
            max_len: int = 128, beam_width: int = 1, batch_size: int = 64) -> list[Trajectory]:
    """Decode a dense segment sequence for each sparse input (timestamps are not imputed: NaN)."""
    if any(len(t) == 0 for t in inputs):
        raise ValueError("empty input trajectory")
    complexity = np.asarray(complexity, dtype=np.float64)
    out: list[Trajectory] = []
    for i in range(0, len(inputs), batch_size):
        chunk = inputs[i:i + batch_size]
        batch = make_batch([t.segments for t in chunk], [t.timestamps for t in chunk],
                           complexity[i:i + batch_size], model.vocab, model.config.max_len)
        if beam_width > 1:
            seqs = model.beam(batch, ctx, theta, max_len, beam_width)
        else:
            seqs = model.greedy(batch, ctx, theta, max_len)
        for t, s in zip(chunk, seqs):
            out.append(Trajectory(t.traj_id, s, [float("nan")] * len(s)))
    return out


def legality_report(net: RoadNetwork, recovered: list[Trajectory]) -> list[tuple[int, int]]:
    """(traj_id, number of non-adjacent consecutive pairs) for every recovered trajectory."""
    return [(t.traj_id, sum(1 for a, b in zip(t.segments[:-1], t.segments[1:]) if not net.is_successor(a, b)))
            for t in recovered]


def save_recovered(inputs: list[Trajectory], recovered: list[Trajectory], path) -> None:
    """Trajectory CSV schema plus a ``source`` column (observed | generated)."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["traj_id", "seq_idx", "seg_id", "timestamp_s", "source"])
        for s, r in zip(inputs, recovered):
            seen = set(s.segments)
            for k, seg in enumerate(r.segments):
                w.writerow([r.traj_id, k, seg, "", "observed" if seg in seen else "generated"])


# ---------------------------------------------------------------- checkpoints

def save_recovery_model(model: RecoveryModel, path) -> None:
    save_model(model.encoder, path, extra={"decoder." + k: v for k, v in model.decoder.state_dict().items()})


def load_recovery_model(path) -> RecoveryModel:
    """Loads a fine-tuned checkpoint, or a pretrained encoder-only one (fresh decoder)."""
    meta, params = split_checkpoint(path)
    enc = TrajectoryEncoder(int(meta["n_segments"]), meta_config(meta))
    enc.load_state_dict({k: v for k, v in params.items() if not k.startswith("decoder.")})
    model = RecoveryModel(enc)
    dec = {k[len("decoder."):]: v for k, v in params.items() if k.startswith("decoder.")}
    if dec:
        model.decoder.load_state_dict(dec)
    return model


__all__ = [
    "FinetuneConfig",
    "FinetuneResult",
    "GRUDecoder",
    "RecoveryExample",
    "RecoveryModel",
    "finetune",
    "input_complexity",
    "legality_report",
    "load_encoder",
    "load_recovery_model",
    "make_examples",
    "recover",
    "save_recovered",
    "save_recovery_model",
    "split_validation",
    "validation_loss",
]
