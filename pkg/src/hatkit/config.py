"""Flat key=value configuration with section prefixes.

Four sections: model., train., decode., task.  Every key has a typed
default below; unknown keys are errors so typos fail loudly instead of
silently running a default experiment.  '#' starts a comment.
"""

from pathlib import Path

from .decoder import DecodeConfig
from .errors import ConfigError
from .network import ModelDims
from .posterior import CTC, HAT, RNNT
from .synthetic import SyntheticTaskSpec

DEFAULTS = {
    "model.d_in": 16,
    "model.embed": 8,
    "model.enc_hidden": 32,
    "model.dec_hidden": 32,
    "model.joint": 32,
    "model.kind": "hat",
    "model.context": "inf",
    "model.joint_nonlinearity": "tanh",
    "train.lr": 0.05,
    "train.clip": 5.0,
    "train.batch": 8,
    "train.epochs": 10,
    "train.seed": 47,
    "train.mtl": "off",
    "train.mtl_weight": 0.1,
    "decode.lambda1": 2.5,
    "decode.lambda2": 0.95,
    "decode.beam": 8,
    "decode.max_labels_per_frame": 5,
    "decode.max_labels_total": "none",
    "decode.nbest": 10,
    "decode.mode": "word_lm",
    "decode.merge": "lse",
    "decode.blank_scale": 1.0,
    "decode.coverage": 0.0,
    "task.labels": 6,
    "task.words": 20,
    "task.pron_min": 2,
    "task.pron_max": 4,
    "task.duration_min": 2,
    "task.duration_max": 4,
    "task.d_in": 16,
    "task.noise_std": 0.3,
    "task.sent_min": 2,
    "task.sent_max": 5,
    "task.train": 500,
    "task.test": 100,
    "task.lm_sentences": 2000,
    "task.concentration": 0.25,
    "task.lm_order": 2,
    "task.lm_k": 0.1,
    "task.seed": 47,
}

_ENUMS = {
    "model.kind": (HAT, RNNT, CTC),
    "model.joint_nonlinearity": ("tanh", "identity"),
    "train.mtl": ("on", "off"),
    "decode.mode": ("label_lm", "word_lm"),
    "decode.merge": ("lse", "max", "none"),
}


def _coerce(key, raw):
    default = DEFAULTS[key]
    raw = raw.strip()
    try:
        if isinstance(default, int) and not isinstance(default, bool):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as "
                          f"{type(default).__name__}") from None
    if key in _ENUMS and raw not in _ENUMS[key]:
        raise ConfigError(f"{key}: {raw!r} not one of {_ENUMS[key]}")
    return raw


def apply_line(cfg, line, where=""):
    body = line.split("#", 1)[0].strip()
    if not body:
        return
    if "=" not in body:
        raise ConfigError(f"{where}expected key=value, got {line!r}")
    key, raw = body.split("=", 1)
    key = key.strip()
    if key not in DEFAULTS:
        raise ConfigError(f"{where}unknown config key {key!r}")
    cfg[key] = _coerce(key, raw)


def parse_config(text, base=None):
    cfg = dict(DEFAULTS if base is None else base)
    for i, line in enumerate(text.splitlines(), 1):
        apply_line(cfg, line, where=f"line {i}: ")
    return cfg


def load_config(path=None, overrides=()):
    """Defaults, then the optional file, then key=value override strings."""
    cfg = dict(DEFAULTS)
    if path is not None:
        cfg = parse_config(Path(path).read_text(encoding="ascii"), base=cfg)
    for ov in overrides:
        apply_line(cfg, ov)
    return cfg


def dump_config(cfg):
    return "".join(f"{k}={cfg[k]}\n" for k in sorted(cfg))


# --- typed views ----------------------------------------------------------------

def model_dims(cfg):
    return ModelDims(d_in=cfg["model.d_in"], embed=cfg["model.embed"],
                     enc_hidden=cfg["model.enc_hidden"],
                     dec_hidden=cfg["model.dec_hidden"], joint=cfg["model.joint"])


def context_of(cfg):
    """None selects the recurrent decoder; an integer the finite table."""
    raw = str(cfg["model.context"])
    if raw == "inf":
        return None
    try:
        c = int(raw)
    except ValueError:
        raise ConfigError(f"model.context: {raw!r} is neither 'inf' nor an "
                          "integer") from None
    if c < 0:
        raise ConfigError("model.context must be >= 0")
    return c


def mtl_weight_of(cfg):
    if cfg["train.mtl"] == "off":
        return 0.0
    mu = cfg["train.mtl_weight"]
    if mu <= 0:
        raise ConfigError("train.mtl is on but train.mtl_weight <= 0")
    if cfg["model.kind"] == CTC:
        raise ConfigError("the label-free baseline has no decoder to regularize")
    return mu


def decode_config(cfg):
    total = cfg["decode.max_labels_total"]
    return DecodeConfig(
        lambda1=cfg["decode.lambda1"],
        lambda2=cfg["decode.lambda2"],
        beam_width=cfg["decode.beam"],
        max_labels_per_frame=cfg["decode.max_labels_per_frame"],
        max_labels_total=None if str(total) == "none" else int(total),
        nbest=cfg["decode.nbest"],
        mode=cfg["decode.mode"],
        merge=cfg["decode.merge"],
        blank_scale=cfg["decode.blank_scale"],
        coverage=cfg["decode.coverage"],
    ).validate()


def task_spec(cfg):
    return SyntheticTaskSpec(
        n_labels=cfg["task.labels"],
        n_words=cfg["task.words"],
        pron_len=(cfg["task.pron_min"], cfg["task.pron_max"]),
        duration=(cfg["task.duration_min"], cfg["task.duration_max"]),
        d_in=cfg["task.d_in"],
        noise_std=cfg["task.noise_std"],
        sent_len=(cfg["task.sent_min"], cfg["task.sent_max"]),
        n_train=cfg["task.train"],
        n_test=cfg["task.test"],
        lm_sentences=cfg["task.lm_sentences"],
        concentration=cfg["task.concentration"],
        lm_order=cfg["task.lm_order"],
        lm_k=cfg["task.lm_k"],
        seed=cfg["task.seed"],
    ).validate()
