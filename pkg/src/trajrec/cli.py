"""Command-line pipeline.

Every subcommand reads its inputs from, and writes its outputs to, ``--out-dir``
(file names below), so any stage can be re-run from persisted artifacts alone.

    gen-data        network.csv train.csv test.csv test_sparse.csv
    build-graphs    view_distance.csv view_entropy.csv calibration.json
    score           scores.csv
    pretrain        encoder.ckpt pretrain_loss.csv
    finetune        recovery.ckpt finetune_loss.csv finetune_val.csv
    recover         recovered.csv
    evaluate        eval.csv eval_summary.csv  (--baseline: baseline_recovered.csv eval_baseline*.csv)
    dump-attention  alpha.csv attention.csv

Exit codes: 0 success, 1 validation error (bad flags, config or inputs), 2 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import config as config_mod
from .baseline import frequency_recover
from .complexity import CorpusCalibration, calibrate, score
from .config import ConfigError
from .encoder import ModelConfig, TrajectoryEncoder, make_batch
from .graph_encoder import GraphContext
from .metrics import aggregate_by_level, evaluate_pair, write_aggregate_csv, write_eval_csv
from .pretrain import PretrainConfig, epoch_means, load_encoder, pretrain
from .recovery import (
    FinetuneConfig,
    RecoveryModel,
    finetune,
    input_complexity,
    legality_report,
    load_recovery_model,
    make_examples,
    recover,
    save_recovered,
    save_recovery_model,
)
from .roadnet import (
    NetworkFormatError,
    build_transition_stats,
    build_view_graphs,
    candidate_pairs,
    load_network,
    load_trajectories,
    load_view_graph,
    save_network,
    save_trajectories,
    save_view_graph,
)
from .synthgen import GenConfig, gen_grid_network, gen_trajectories, sparsify

log = logging.getLogger("trajrec.cli")

NETWORK = "network.csv"
TRAIN = "train.csv"
TEST = "test.csv"
TEST_SPARSE = "test_sparse.csv"
VIEW_D = "view_distance.csv"
VIEW_E = "view_entropy.csv"
CALIB = "calibration.json"
ENCODER = "encoder.ckpt"
RECOVERY = "recovery.ckpt"
RECOVERED = "recovered.csv"


class UsageError(Exception):
    pass


class ArgParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------- shared loading

class Run:
    """Resolved config plus lazily loaded artifacts of one invocation."""

    def __init__(self, args, cfg: dict):
        self.args = args
        self.cfg = cfg
        self.out = Path(args.out_dir)
        self._cache: dict = {}

    def path(self, name: str) -> Path:
        return self.out / name

    def need(self, name: str) -> Path:
        p = self.path(name)
        if not p.exists():
            raise FileNotFoundError(f"missing artifact {p}; run the producing subcommand first")
        return p

    def _get(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    @property
    def net(self):
        return self._get("net", lambda: load_network(self.need(NETWORK)))

    @property
    def train(self):
        return self._get("train", lambda: load_trajectories(self.need(TRAIN)))

    @property
    def stats(self):
        return self._get("stats", lambda: build_transition_stats(self.train, self.net))

    @property
    def views(self):
        return self._get("views", lambda: (load_view_graph(self.need(VIEW_D)), load_view_graph(self.need(VIEW_E))))

    @property
    def calib(self) -> CorpusCalibration:
        return self._get("calib", lambda: CorpusCalibration.load(self.need(CALIB)))

    @property
    def theta(self) -> float:
        return self.cfg["theta"] if self.cfg["theta"] is not None else self.calib.theta

    def context(self, K: int) -> GraphContext:
        return self._get(("ctx", K), lambda: GraphContext(*self.views, K=K))

    def trajectories(self, flag, default: str):
        return load_trajectories(Path(flag) if flag else self.need(default))


def model_config(cfg: dict) -> ModelConfig:
    return ModelConfig(d_e=cfg["d_e"], d_h=cfg["d_h"], n_layers=cfg["n_layers"], n_heads=cfg["n_heads"],
                       buckets=cfg["B"], K=cfg["K"], gat_heads=cfg["gat_heads"], d_ff=cfg["d_ff"],
                       max_len=cfg["max_len"], soft_mask=cfg["soft_mask"], dec_hidden=cfg["dec_hidden"],
                       dec_layers=cfg["dec_layers"], dec_attention=cfg["dec_attention"], seed=cfg["seed"])


# ---------------------------------------------------------------- subcommands

def cmd_gen_data(run: Run) -> None:
    cfg = run.cfg
    gen = GenConfig(n=cfg["grid_n"], m=cfg["grid_m"], spacing=cfg["spacing"], count=cfg["n_traj"],
                    p_detour=cfg["p_detour"], turn_bias=cfg["turn_bias"], seed=cfg["seed"])
    net = gen_grid_network(gen.n, gen.m, gen.spacing)
    corpus = gen_trajectories(net, gen)
    n_test = int(round(cfg["test_fraction"] * len(corpus)))
    if n_test >= len(corpus):
        raise ConfigError("test_fraction leaves no training trajectories")
    train, test = corpus[:len(corpus) - n_test], corpus[len(corpus) - n_test:]
    save_network(net, run.path(NETWORK))
    save_trajectories(train, run.path(TRAIN))
    save_trajectories(test, run.path(TEST))
    save_trajectories([sparsify(t, cfg["keep_ratio"], cfg["seed"]) for t in test], run.path(TEST_SPARSE))
    log.info("gen-data segments=%d train=%d test=%d", net.n_segments, len(train), len(test))


def cmd_build_graphs(run: Run) -> None:
    cfg = run.cfg
    net, train = run.net, run.train
    jd, je = build_view_graphs(net, run.stats, k=cfg["k"], seed=cfg["seed"],
                               pairs=candidate_pairs(net, train, hops=cfg["hops"]))
    save_view_graph(jd, run.path(VIEW_D))
    save_view_graph(je, run.path(VIEW_E))
    calib = calibrate(train, net, run.stats, mu=cfg["mu"], nu=cfg["nu"])
    calib.save(run.path(CALIB))
    log.info("build-graphs pairs=%d theta=%r", jd.rows.size, calib.theta)


def cmd_score(run: Run) -> None:
    trajs = run.trajectories(run.args.input, TRAIN)
    path = run.path(run.args.output or "scores.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["traj_id", "ds", "es", "complexity", "level"])
        for t in trajs:
            prof = score(t, run.net, run.stats, run.calib)
            w.writerow([t.traj_id, repr(float(prof.ds)), repr(float(prof.es)), repr(float(prof.complexity)), prof.level])
    log.info("score trajectories=%d", len(trajs))


def cmd_pretrain(run: Run) -> None:
    cfg = run.cfg
    mcfg = model_config(cfg)
    train = run.train
    cs = [score(t, run.net, run.stats, run.calib).complexity for t in train]
    model = TrajectoryEncoder(run.net.n_segments, mcfg)
    pcfg = PretrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"], mask_ratio=cfg["mask_ratio"],
                          lr=cfg["lr"], seed=cfg["seed"])
    rows = pretrain(model, train, cs, run.context(mcfg.K), run.theta, pcfg,
                    loss_log=run.path("pretrain_loss.csv"), checkpoint=run.path(ENCODER))
    means = epoch_means(rows)
    if means:
        log.info("pretrain first_epoch_loss=%r last_epoch_loss=%r", means[0], means[-1])


def cmd_finetune(run: Run) -> None:
    cfg = run.cfg
    if run.args.no_pretrain:
        model = RecoveryModel(TrajectoryEncoder(run.net.n_segments, model_config(cfg)))
    else:
        src = Path(run.args.checkpoint) if run.args.checkpoint else run.need(ENCODER)
        model = RecoveryModel(load_encoder(src))
    jd, _ = run.views
    examples = make_examples(run.train, run.net, run.stats, run.calib, jd, cfg["keep_ratio"], cfg["seed"])
    fcfg = FinetuneConfig(max_epochs=cfg["ft_max_epochs"], batch_size=cfg["batch_size"], lr=cfg["ft_lr"],
                          patience=cfg["patience"], val_fraction=cfg["val_fraction"], keep_ratio=cfg["keep_ratio"],
                          freeze_encoder=cfg["freeze_encoder"], grad_clip=cfg["grad_clip"], seed=cfg["seed"])
    res = finetune(model, examples, run.context(model.config.K), run.theta, fcfg,
                   loss_log=run.path("finetune_loss.csv"))
    with open(run.path("finetune_val.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "val_loss"])
        for e, v in enumerate(res.val_losses):
            w.writerow([e, repr(float(v))])
    save_recovery_model(model, run.path(RECOVERY))
    log.info("finetune best_epoch=%d stopped_early=%s", res.best_epoch, res.stopped_early)


def _recovery_model(run: Run) -> RecoveryModel:
    src = Path(run.args.checkpoint) if run.args.checkpoint else run.need(RECOVERY)
    return load_recovery_model(src)


def cmd_recover(run: Run) -> None:
    cfg = run.cfg
    model = _recovery_model(run)
    inputs = run.trajectories(run.args.input, TEST_SPARSE)
    jd, _ = run.views
    cs = [input_complexity(t, run.net, run.stats, run.calib, jd) for t in inputs]
    out = recover(model, inputs, cs, run.context(model.config.K), run.theta,
                  max_len=cfg["decode_max_len"], beam_width=cfg["beam_width"])
    save_recovered(inputs, out, run.path(run.args.output or RECOVERED))
    bad = legality_report(run.net, out)
    if bad:
        log.warning("recover illegal_transitions=%d", len(bad))
    log.info("recover trajectories=%d", len(out))


def cmd_evaluate(run: Run) -> None:
    cfg = run.cfg
    truth = {t.traj_id: t for t in run.trajectories(run.args.truth, TEST)}
    inputs = run.trajectories(run.args.input, TEST_SPARSE)
    if run.args.baseline:
        pred = {t.traj_id: frequency_recover(t, run.net, run.stats) for t in inputs}
        save_recovered(inputs, [pred[t.traj_id] for t in inputs], run.path("baseline_recovered.csv"))
        stem = "eval_baseline"
    else:
        pred = {t.traj_id: t for t in run.trajectories(run.args.pred, RECOVERED)}
        stem = "eval"
    rows = []
    for t in inputs:
        if t.traj_id not in truth:
            raise ValueError(f"no ground truth for trajectory {t.traj_id}")
        gt = truth[t.traj_id]
        prof = score(gt, run.net, run.stats, run.calib)
        p = pred.get(t.traj_id)
        rows.append(evaluate_pair(run.net, t.traj_id, p.segments if p else [], gt.segments, prof.complexity,
                                  prof.level, cfg["sample_step"]))
    write_eval_csv(rows, run.path(stem + ".csv"))
    agg = aggregate_by_level(rows)
    write_aggregate_csv(agg, run.path(stem + "_summary.csv"))
    for a in agg:
        log.info("evaluate level=%s n=%d f1=%.4f owd=%.2f md=%.4f", a["level"], a["n"], a["f1"], a["owd"], a["md"])


def cmd_dump_attention(run: Run) -> None:
    path = Path(run.args.checkpoint) if run.args.checkpoint else (
        run.path(RECOVERY) if run.path(RECOVERY).exists() else run.need(ENCODER))
    enc = load_recovery_model(path).encoder
    inputs = run.trajectories(run.args.input, TEST_SPARSE)[:run.args.limit]
    jd, _ = run.views
    ctx = run.context(enc.config.K)
    with open(run.path("alpha.csv"), "w", newline="") as fa, open(run.path("attention.csv"), "w", newline="") as fw:
        wa, ww = csv.writer(fa), csv.writer(fw)
        wa.writerow(["traj_id", "pos", "alpha_d", "alpha_e"])
        ww.writerow(["traj_id", "layer", "head", "i", "j", "weight"])
        for t in inputs:
            c = input_complexity(t, run.net, run.stats, run.calib, jd)
            out = enc(make_batch([t.segments], [t.timestamps], [c], enc.vocab, enc.config.max_len), ctx, run.theta)
            n = len(t)
            for pos in range(n):
                wa.writerow([t.traj_id, pos, repr(float(out.alpha[0, pos, 0])), repr(float(out.alpha[0, pos, 1]))])
            for li, w in enumerate(out.attention):
                for h in range(w.shape[1]):
                    for i in range(n):
                        for j in range(n):
                            ww.writerow([t.traj_id, li, h, i, j, repr(float(w[0, h, i, j]))])
    log.info("dump-attention trajectories=%d", len(inputs))


COMMANDS = {
    "gen-data": cmd_gen_data,
    "build-graphs": cmd_build_graphs,
    "score": cmd_score,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "recover": cmd_recover,
    "evaluate": cmd_evaluate,
    "dump-attention": cmd_dump_attention,
}


# ---------------------------------------------------------------- argument parsing

def _grid(text: str) -> tuple[int, int]:
    try:
        n, m = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected NxM, got {text!r}") from None
    return n, m


def build_parser() -> ArgParser:
    parser = ArgParser(prog="trajrec", description="Complexity-aware trajectory pretraining and recovery.",
                       allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ArgParser)
    parser.commands = {}
    for name in COMMANDS:
        p = sub.add_parser(name, allow_abbrev=False)
        parser.commands[name] = p
        p.add_argument("--out-dir", default=".", help="directory holding every artifact of the run")
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--log-level", default="INFO")
        g = p.add_argument_group("config overrides")
        for key in config_mod.DEFAULTS:
            g.add_argument("--" + key.replace("_", "-"), dest="cfg_" + key, metavar="V")
        if name == "gen-data":
            p.add_argument("--grid", type=_grid, help="grid size NxM (nodes)")
            p.add_argument("--n", dest="cfg_n_traj", metavar="N", help="number of trajectories")
        if name in ("score", "recover", "evaluate", "dump-attention"):
            p.add_argument("--input", help="trajectory CSV (default: the stage's standard input artifact)")
        if name in ("score", "recover"):
            p.add_argument("--output", help="output file name inside --out-dir")
        if name in ("finetune", "recover", "dump-attention"):
            p.add_argument("--checkpoint", help="model checkpoint to load")
        if name == "finetune":
            p.add_argument("--no-pretrain", action="store_true", help="start from a freshly initialised encoder")
        if name == "evaluate":
            p.add_argument("--truth", help="dense ground-truth CSV (default test.csv)")
            p.add_argument("--pred", help="recovered CSV (default recovered.csv)")
            p.add_argument("--baseline", action="store_true", help="evaluate the frequency baseline instead")
        if name == "dump-attention":
            p.add_argument("--limit", type=int, default=20, help="number of input trajectories to dump")
    return parser


def _resolve_config(args) -> dict:
    file_values = config_mod.load_config(args.config) if args.config else {}
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_")}
    grid = getattr(args, "grid", None)
    if grid is not None:
        overrides["grid_n"], overrides["grid_m"] = str(grid[0]), str(grid[1])
    return config_mod.effective_config(file_values, overrides)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if extra:
            parser.commands[args.command].error(f"unrecognized arguments: {' '.join(extra)}")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO), force=True,
                        format="%(asctime)s %(levelname)s %(name)s %(message)s")
    try:
        cfg = _resolve_config(args)
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"config.{args.command}.txt").write_text(config_mod.format_config(cfg))
        COMMANDS[args.command](Run(args, cfg))
    except (ConfigError, NetworkFormatError, FileNotFoundError, ValueError) as exc:
        log.error("%s: %s", args.command, exc)
        return 1
    except Exception as exc:  # noqa: BLE001 - anything else, training divergence included, is a runtime error
        log.exception("%s failed: %s", args.command, exc)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
