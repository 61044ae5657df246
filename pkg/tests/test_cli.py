import csv

import pytest

from trajrec import config as config_mod
from trajrec.cli import run
from trajrec.config import ConfigError, effective_config, format_config, parse_config
from trajrec.metrics import EVAL_COLUMNS

TINY_FLAGS = ["--d-e", "8", "--d-h", "16", "--n-layers", "1", "--n-heads", "2", "--B", "8", "--d-ff", "16",
              "--dec-hidden", "8", "--dec-layers", "1", "--K", "4"]


def _header(path):
    with open(path, newline="") as fh:
        return next(csv.reader(fh))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    d = ["--out-dir", str(out), "--log-level", "WARNING", "--seed", "3"]
    assert run(["gen-data", "--grid", "4x4", "--n", "120", *d]) == 0
    assert run(["build-graphs", "--K", "4", *d]) == 0
    assert run(["score", *d]) == 0
    assert run(["pretrain", "--epochs", "2", *TINY_FLAGS, *d]) == 0
    assert run(["finetune", "--ft-max-epochs", "2", *d]) == 0
    assert run(["recover", "--decode-max-len", "30", *d]) == 0
    assert run(["evaluate", *d]) == 0
    assert run(["evaluate", "--baseline", *d]) == 0
    assert run(["dump-attention", "--limit", "2", *d]) == 0
    return out, d


def test_pipeline_artifacts_and_schemas(pipeline):
    out, _ = pipeline
    assert tuple(_header(out / "eval.csv")) == EVAL_COLUMNS
    assert tuple(_header(out / "eval_baseline.csv")) == EVAL_COLUMNS
    assert _header(out / "scores.csv") == ["traj_id", "ds", "es", "complexity", "level"]
    assert _header(out / "pretrain_loss.csv") == ["epoch", "step", "loss"]
    assert _header(out / "recovered.csv") == ["traj_id", "seq_idx", "seg_id", "timestamp_s", "source"]
    assert _header(out / "alpha.csv") == ["traj_id", "pos", "alpha_d", "alpha_e"]
    assert _header(out / "attention.csv") == ["traj_id", "layer", "head", "i", "j", "weight"]
    with open(out / "alpha.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            assert float(row["alpha_d"]) + float(row["alpha_e"]) == pytest.approx(1.0, abs=1e-12)
    echoed = config_mod.load_config(out / "config.pretrain.txt")
    assert echoed["d_e"] == 8 and echoed["seed"] == 3 and echoed["epochs"] == 2


def test_score_is_byte_identical_across_runs(pipeline, tmp_path):
    out, d = pipeline
    before = (out / "scores.csv").read_bytes()
    assert run(["score", *d, "--output", "again.csv"]) == 0
    assert (out / "again.csv").read_bytes() == before


def test_recover_rerun_from_checkpoint_is_identical(pipeline):
    out, d = pipeline
    assert run(["recover", "--decode-max-len", "30", "--output", "again.csv", *d]) == 0
    assert (out / "again.csv").read_bytes() == (out / "recovered.csv").read_bytes()


def test_exit_codes(pipeline, tmp_path, capsys):
    out, d = pipeline
    assert run(["pretrain", "--no-such-flag", "1", *d]) == 1
    assert "usage" in capsys.readouterr().err
    assert run(["no-such-command"]) == 1
    assert run(["pretrain", "--d-e", "seven", *d]) == 1
    assert run(["pretrain", "--d-e", "7", *d]) == 1
    assert run(["recover", "--out-dir", str(tmp_path / "empty"), "--log-level", "CRITICAL"]) == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("d_e = 8\nnot a pair\n")
    assert run(["score", "--config", str(bad), *d]) == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_bad_checkpoint_and_divergence_exit_codes(pipeline, tmp_path):
    out, d = pipeline
    broken = tmp_path / "broken.ckpt"
    broken.write_bytes(b"TRJCKPT\0" + b"\xff" * 7)
    assert run(["recover", "--checkpoint", str(broken), *d]) == 1
    # an absurd step size overflows the parameters: a runtime failure, not a validation error
    div = ["--out-dir", str(tmp_path / "div"), "--log-level", "CRITICAL"]
    for name in ("network.csv", "train.csv", "view_distance.csv", "view_distance.csv.meta.json",
                 "view_entropy.csv", "view_entropy.csv.meta.json", "calibration.json"):
        (tmp_path / "div").mkdir(exist_ok=True)
        (tmp_path / "div" / name).write_bytes((out / name).read_bytes())
    assert run(["pretrain", "--epochs", "3", "--lr", "1e300", *TINY_FLAGS, *div]) == 2


def test_config_file_then_flags(tmp_path):
    text = "# comment\nd_e = 16\nlr = 0.5  # trailing\nsoft_mask = false\ntheta =\n"
    vals = parse_config(text)
    assert vals == {"d_e": 16, "lr": 0.5, "soft_mask": False, "theta": None}
    cfg = effective_config(vals, {"d_e": "24", "seed": None})
    assert cfg["d_e"] == 24 and cfg["lr"] == 0.5 and cfg["seed"] == 0
    assert parse_config(format_config(cfg)) == cfg
    with pytest.raises(ConfigError):
        parse_config("bogus = 1")
    with pytest.raises(ConfigError):
        effective_config({"keep_ratio": 0.0})
