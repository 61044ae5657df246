"""Flat ``key = value`` run configuration.

One namespace covers every stage so a single file can drive the whole
pipeline; each subcommand reads the keys it needs. Values are typed by the
default they override. ``theta`` is empty by default, meaning "use the
corpus q75 from calibration".
"""
from __future__ import annotations

from pathlib import Path

DEFAULTS: dict[str, object] = {
    # data
    "grid_n": 8,
    "grid_m": 8,
    "spacing": 100.0,
    "n_traj": 2000,
    "p_detour": 0.5,
    "turn_bias": 0.5,
    "test_fraction": 0.1,
    "keep_ratio": 2 / 3,
    # view graphs and complexity
    "k": 3,
    "K": 8,
    "hops": 4,
    "mu": 0.5,
    "nu": 0.5,
    "theta": None,
    # model
    "d_e": 32,
    "d_h": 64,
    "n_layers": 2,
    "n_heads": 4,
    "B": 32,
    "d_ff": 128,
    "gat_heads": 2,
    "max_len": 256,
    "soft_mask": True,
    "dec_hidden": 64,
    "dec_layers": 2,
    "dec_attention": True,
    # pretraining
    "epochs": 10,
    "batch_size": 16,
    "mask_ratio": 2 / 3,
    "lr": 1e-3,
    # fine-tuning
    "ft_max_epochs": 30,
    "ft_lr": 1e-3,
    "patience": 3,
    "val_fraction": 0.1,
    "freeze_encoder": False,
    "grad_clip": 1.0,
    # decoding and evaluation
    "beam_width": 1,
    "decode_max_len": 128,
    "sample_step": None,
    "seed": 0,
}

# keys whose empty value means "not set"
OPTIONAL_FLOAT = {"theta", "sample_step"}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class ConfigError(ValueError):
    pass


def coerce(key: str, text) -> object:
    """Parse ``text`` into the type of ``DEFAULTS[key]``."""
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    if not isinstance(text, str):
        return text
    text = text.strip()
    if key in OPTIONAL_FLOAT:
        if text.lower() in ("", "none"):
            return None
        kind = float
    else:
        kind = type(DEFAULTS[key])
    try:
        if kind is bool:
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind.__name__}") from None


def parse_config(text: str, source: str = "<config>") -> dict[str, object]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            out[key] = coerce(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return out


def load_config(path) -> dict[str, object]:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def effective_config(file_values: dict | None = None, overrides: dict | None = None) -> dict[str, object]:
    """Defaults, then the config file, then flags."""
    cfg = dict(DEFAULTS)
    cfg.update(file_values or {})
    cfg.update({k: coerce(k, v) for k, v in (overrides or {}).items() if v is not None})
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    need(cfg["grid_n"] >= 2 and cfg["grid_m"] >= 2, "grid needs at least 2x2 nodes")
    need(cfg["n_traj"] >= 1, "n_traj must be positive")
    for key in ("p_detour", "turn_bias", "mu", "nu"):
        need(0.0 <= cfg[key] <= 1.0, f"{key} must lie in [0, 1]")
    for key in ("test_fraction", "val_fraction"):
        need(0.0 <= cfg[key] < 1.0, f"{key} must lie in [0, 1)")
    for key in ("keep_ratio", "mask_ratio"):
        need(0.0 < cfg[key] <= 1.0, f"{key} must lie in (0, 1]")
    for key in ("k", "K", "d_e", "d_h", "n_layers", "n_heads", "B", "d_ff", "gat_heads", "max_len",
                "dec_hidden", "dec_layers", "batch_size", "beam_width", "decode_max_len"):
        need(cfg[key] >= 1, f"{key} must be >= 1")
    need(cfg["d_e"] % 2 == 0, "d_e must be even")
    need(cfg["d_h"] % cfg["n_heads"] == 0, "d_h must be divisible by n_heads")
    need(cfg["d_h"] % 2 == 0, "d_h must be even")
    need(cfg["d_e"] % cfg["gat_heads"] == 0, "d_e must be divisible by gat_heads")
    need(cfg["epochs"] >= 0 and cfg["ft_max_epochs"] >= 0, "epoch counts must be >= 0")
    need(cfg["lr"] >= 0 and cfg["ft_lr"] >= 0, "learning rates must be >= 0")
    need(cfg["sample_step"] is None or cfg["sample_step"] > 0, "sample_step must be positive")


def format_config(cfg: dict) -> str:
    lines = []
    for key in DEFAULTS:
        v = cfg[key]
        if v is None:
            text = ""
        elif isinstance(v, bool):
            text = "true" if v else "false"
        elif isinstance(v, float):
            text = repr(v)
        else:
            text = str(v)
        lines.append(f"{key} = {text}".rstrip())
    return "\n".join(lines) + "\n"
