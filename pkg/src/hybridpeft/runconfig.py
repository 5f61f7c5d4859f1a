"""Run configuration: INI file with sections, overridable key by key from flags.

Every key lives in ``KEYS`` with its section, type, default and help text;
the CLI builds its flags from the same table, so the two never drift apart.
"""
from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConfigError
from .governance import DEFAULT_DEDUP_THRESHOLD, STAGES, QualityPolicy
from .trainer.config import MODES, TrainConfig

OUT_DIR_ENV = "HPEFT_OUT_DIR"


def _bool(text: str) -> bool:
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _layers(text: str):
    v = str(text).strip().lower()
    if v in ("", "all"):
        return None
    return tuple(int(p) for p in v.split(","))


def _ceiling(text: str):
    v = str(text).strip().lower()
    if v in ("auto", "off"):
        return v
    return float(v)


_T = TrainConfig()

# (section, key, parser, default, help)
KEYS = [
    ("run", "seed", int, 0, "random seed"),
    ("run", "workers", int, 1, "worker threads for per-document work (output is identical for any value)"),
    ("run", "out_dir", str, "out", f"output directory (the {OUT_DIR_ENV} environment variable wins)"),
    ("govern", "stage", str, "C2", f"curation stage, one of {', '.join(STAGES)}"),
    ("govern", "min_chars", float, 24.0, "minimum stripped length in characters"),
    ("govern", "max_chars", float, 2000.0, "maximum stripped length in characters"),
    ("govern", "entropy_floor", float, 2.5, "minimum character entropy in bits"),
    ("govern", "ppl_ceiling", _ceiling, "auto", "perplexity ceiling: a number, 'auto' (calibrated per language) or 'off'"),
    ("govern", "ppl_quantile", float, 0.95, "clean-perplexity quantile used by the auto ceiling, in (0, 1]"),
    ("govern", "ppl_headroom", float, 2.0, "multiplier applied to that quantile, >= 1"),
    ("govern", "dedup_threshold", int, DEFAULT_DEDUP_THRESHOLD, "max SimHash Hamming distance of near-duplicates, 0..64"),
    ("train", "mode", str, _T.mode, f"adapter mode, one of {', '.join(MODES)}"),
    ("train", "dim", int, _T.dim, "hidden width, a power of two"),
    ("train", "layers", int, _T.layers, "number of hidden layers, >= 1"),
    ("train", "rank", int, _T.rank, "low-rank adapter rank r, 1..dim"),
    ("train", "alpha", float, _T.alpha, "low-rank scaling alpha (delta scale is alpha/r)"),
    ("train", "lambda_cap", float, _T.lambda_cap, "cap on ||delta||_F as a multiple of ||W0||_F"),
    ("train", "eta_lora", float, _T.eta_lora, "step size of the low-rank factors"),
    ("train", "eta_boft", float, _T.eta_boft, "Cayley step size and butterfly step size"),
    ("train", "eta_head", float, _T.eta_head, "step size of the classifier head"),
    ("train", "eta_full", float, _T.eta_full, "step size of full fine-tuning"),
    ("train", "eta_unitary", float, _T.eta_unitary, "step size of the exponential-map unitary update"),
    ("train", "epochs", int, _T.epochs, "training epochs E, >= 0"),
    ("train", "batch_size", int, _T.batch_size, "minibatch size, >= 1"),
    ("train", "boft_depth", int, _T.boft_depth, "butterfly depth m, 1..log2(dim)"),
    ("train", "unitary_layers", _layers, None, "comma-separated layer indices that carry a unitary adapter, or 'all'"),
    ("train", "ga_scale", float, _T.ga_scale, "Frobenius norm of the gradient-aligned initial delta"),
    ("train", "warmup_epochs", int, _T.warmup_epochs, "epochs of base-weight warm-up"),
    ("train", "warmup_eta", float, _T.warmup_eta, "step size of base-weight warm-up"),
    ("eval", "bins", int, 10, "number of equal-width ECE bins, >= 1"),
    ("eval", "robustness", _bool, True, "also report perturbation drops"),
    ("paths", "corpus", str, "", "input corpus (JSONL)"),
    ("paths", "lid_corpus", str, "", "language-labelled corpus for language ID (JSONL)"),
    ("paths", "calib_corpus", str, "", "clean corpus for the auto perplexity ceiling (default: lid_corpus)"),
    ("paths", "val_corpus", str, "", "validation corpus for train (JSONL, optional)"),
    ("paths", "warmup_corpus", str, "", "language-labelled corpus for base warm-up (default: synthetic)"),
    ("paths", "checkpoint", str, "", "checkpoint to evaluate"),
    ("paths", "predictions", str, "", "prediction records to score instead of a checkpoint"),
]
KEY_INDEX = {k: (sec, parse, default) for sec, k, parse, default, _ in KEYS}
_TRAIN_KEYS = [k for sec, k, *_ in KEYS if sec == "train"]


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def train_config(self) -> TrainConfig:
        kw = {k: self.values[k] for k in _TRAIN_KEYS}
        return TrainConfig(seed=self.seed, workers=self.workers, **kw)

    def policy(self, ceiling=math.inf) -> QualityPolicy:
        return QualityPolicy(self.min_chars, self.max_chars, self.entropy_floor, ceiling)

    def path(self, key: str, required: bool = False) -> Optional[str]:
        value = self.values.get(key) or None
        if value is None and required:
            raise ConfigError(f"missing required path '{key}'")
        return value


def _parse(key: str, raw):
    _, parse, _ = KEY_INDEX[key]
    if not isinstance(raw, str):
        return raw
    try:
        return parse(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc


def load_ini(path: str) -> dict:
    """Flat ``{key: value}`` from an INI file; unknown sections or keys are errors."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config {path}: {exc}") from exc
    out = {}
    sections = {sec for sec, *_ in KEYS}
    for sec in parser.sections():
        if sec not in sections:
            raise ConfigError(f"unknown config section [{sec}]")
        for key, raw in parser.items(sec):
            if key not in KEY_INDEX or KEY_INDEX[key][0] != sec:
                raise ConfigError(f"unknown key '{key}' in section [{sec}]")
            out[key] = _parse(key, raw)
    return out


def resolve(ini_path: Optional[str] = None, overrides: Optional[dict] = None,
            env: Optional[dict] = None) -> RunConfig:
    """Defaults, then the INI file, then explicit overrides, then the environment."""
    values = {k: default for k, (_, _, default) in KEY_INDEX.items()}
    if ini_path:
        values.update(load_ini(ini_path))
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = _parse(k, v)
    env = os.environ if env is None else env
    if env.get(OUT_DIR_ENV):
        values["out_dir"] = env[OUT_DIR_ENV]
    cfg = RunConfig(values)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    v = cfg.values
    if v["stage"] not in STAGES:
        raise ConfigError(f"stage must be one of {STAGES}, got {v['stage']!r}")
    if v["workers"] < 1:
        raise ConfigError("workers must be >= 1")
    if not 0 <= v["dedup_threshold"] <= 64:
        raise ConfigError("dedup_threshold must lie in [0, 64]")
    if not 0 < v["ppl_quantile"] <= 1:
        raise ConfigError("ppl_quantile must lie in (0, 1]")
    if v["ppl_headroom"] < 1:
        raise ConfigError("ppl_headroom must be >= 1")
    if isinstance(v["ppl_ceiling"], float) and not v["ppl_ceiling"] > 0:
        raise ConfigError("ppl_ceiling must be positive")
    if v["bins"] < 1:
        raise ConfigError("bins must be >= 1")
    if not 0 <= v["min_chars"] <= v["max_chars"]:
        raise ConfigError("need 0 <= min_chars <= max_chars")
    cfg.train_config()  # range checks on the training keys
