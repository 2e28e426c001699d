"""Run configuration: nested JSON with documented defaults, presets and hashing.

Every key is optional in a user file; missing keys take the values in
:data:`DEFAULTS`. Unknown keys are rejected so typos fail loudly.
"""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from .model import ModelConfig
from .nn import ConfigError
from .training import TrainConfig

DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "paths": {
        # plain-text training documents, whitespace tokenized, one document per file
        "corpus": [],
        # eye-tracking TSV (columns in neatread.corpus.EYETRACK_COLUMNS)
        "eyetrack": None,
        "out_dir": "neat-run",
    },
    "corpus": {
        "vocab_size": 2000,
        "seq_len": 20,
        "lowercase": False,
    },
    "model": {
        "emb_dim": 32,
        "reader_cells": 64,
        "decoder_cells": 64,
        "att_hidden": 32,
        "init_scale": 0.05,
        "skip_mode": "learned",
        "decoder_mode": "init",
    },
    "train": {
        "alpha": 5.0,
        "gamma": 5.0,
        "mask_rate": 0.62,
        "lr_lm": 0.1,
        "lr_attention": 0.01,
        "lr_value": 0.01,
        "batch_size": 16,
        # policy-gradient steps are noisy; larger batches keep the policy from drifting
        "batch_size_attention": 64,
        "epochs_lm": 5,
        "epochs_attention": 5,
        "clip": 5.0,
        "value_cells": 20,
    },
    "evaluate": {
        # sequence positions dropped at each end of a window
        "boundary": 3,
        # "per_reader": mean over readers; "aggregate": gold = aggregate probability >= 0.5
        "gold": "per_reader",
        # fixation rate the threshold baselines and NEAT's rescaling aim at; null = measured human rate
        "target_rate": None,
        # handling of missing decisions in the human-reader fixation perplexity
        # "drop" | "one" (replace with a fixation) | "bernoulli" (replace with Binom(target))
        "human_missing": "drop",
        # "token" or "type" level correlations
        "correlation_level": "token",
        "baselines": True,
        # one intercept column per document as a fixed-effects stand-in for item effects
        "doc_effects": False,
    },
    "heatmap": {
        # document to render; null = first document of the simulation
        "doc": None,
        "max_tokens": 2000,
    },
}

PAPER_SCALE = {
    "corpus": {"vocab_size": 10000, "seq_len": 50},
    "model": {"emb_dim": 100, "reader_cells": 1000, "decoder_cells": 1000, "att_hidden": 100},
    "train": {"epochs_lm": 1, "epochs_attention": 1},
}

# keys that describe where things live rather than the experiment itself
UNHASHED = ("paths", "threads")


def _merge(base, override, where=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{where}.{key}" if where else key
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path!r} must be an object")
            out[key] = _merge(base[key], value, path)
        else:
            out[key] = value
    return out


def load_config(path=None, paper_scale=False, overrides=()):
    """Defaults, then the preset, then the file, then ``key.path=value`` overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if paper_scale:
        cfg = _merge(cfg, PAPER_SCALE)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            user = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{p}: top level must be an object")
        _resolve_paths(user.get("paths"), p.parent)
        cfg = _merge(cfg, user)
    for item in overrides:
        set_key(cfg, item)
    validate(cfg)
    return cfg


def _resolve_paths(paths, base):
    # relative paths in a config file are relative to that file
    if not isinstance(paths, dict):
        return

    def fix(v):
        return v if v is None or Path(v).is_absolute() else str(base / v)

    for key, value in paths.items():
        if isinstance(value, list):
            paths[key] = [fix(v) for v in value]
        elif isinstance(value, str):
            paths[key] = fix(value)


def set_key(cfg, assignment):
    """Apply ``a.b.c=value``; the value is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, text = assignment.split("=", 1)
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    parts = key.split(".")
    node = cfg
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            raise ConfigError(f"unknown config key {key!r}")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = value


def validate(cfg):
    if not isinstance(cfg["seed"], int) or not 0 <= cfg["seed"] < 2**64:
        raise ConfigError("seed must be an integer in [0, 2^64)")
    if not isinstance(cfg["threads"], int) or cfg["threads"] < 1:
        raise ConfigError("threads must be a positive integer")
    if cfg["corpus"]["vocab_size"] < 1:
        raise ConfigError("corpus.vocab_size must be >= 1")
    if cfg["corpus"]["seq_len"] < 2:
        raise ConfigError("corpus.seq_len must be >= 2")
    ev = cfg["evaluate"]
    if ev["gold"] not in ("per_reader", "aggregate"):
        raise ConfigError("evaluate.gold must be 'per_reader' or 'aggregate'")
    if ev["human_missing"] not in ("drop", "one", "bernoulli"):
        raise ConfigError("evaluate.human_missing must be 'drop', 'one' or 'bernoulli'")
    if ev["correlation_level"] not in ("token", "type"):
        raise ConfigError("evaluate.correlation_level must be 'token' or 'type'")
    if not 0 <= ev["boundary"] < cfg["corpus"]["seq_len"] / 2:
        raise ConfigError("evaluate.boundary must be smaller than half of corpus.seq_len")
    if ev["target_rate"] is not None and not 0 < ev["target_rate"] < 1:
        raise ConfigError("evaluate.target_rate must lie in (0, 1)")
    if isinstance(cfg["paths"]["corpus"], str):
        cfg["paths"]["corpus"] = [cfg["paths"]["corpus"]]
    train_config(cfg).validate()
    model_config(cfg, vocab_size=len(("<unk>", "<bos>")) + 1).validate()
    return cfg


def config_hash(cfg):
    """Short SHA-256 of the experiment-defining part of the config."""
    core = {k: v for k, v in cfg.items() if k not in UNHASHED}
    blob = json.dumps(core, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def model_config(cfg, vocab_size):
    m = cfg["model"]
    try:
        return ModelConfig(vocab_size=vocab_size, seq_len=cfg["corpus"]["seq_len"], **m)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def train_config(cfg):
    try:
        return TrainConfig(seed=cfg["seed"], **cfg["train"])
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def dump_defaults():
    return json.dumps(DEFAULTS, indent=2, sort_keys=True) + "\n"
