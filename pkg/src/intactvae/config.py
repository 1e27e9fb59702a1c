"""INI configuration for sweeps and training runs.

Grammar (standard ``configparser`` INI; ``#`` and ``;`` start comments)::

    [sweep]
    n_models = 20                 ; models per grid cell
    settings = proxy_confounded   ; comma separated
    outcome_kind = nonlinear_invertible
    alphas = 0.2                  ; comma separated grid
    betas = 0.2
    base_seed = 0
    workers = 1                   ; processes; 1 runs serially
    output = sweep.csv
    normalize_ate = false
    include_naive = true
    mc_draws = 100
    n_points = 1500
    covariate_dim = 3

    [train]
    learning_rate = 1e-4
    batch_size = 100
    max_epochs = 500
    patience = 20                 ; "inf" disables early stopping
    min_epochs = 100
    eval_every = 1
    latent_dim = 1
    hidden = 200,200,200
    balanced_prior = true
    separate_decoder_heads = false
    learn_decoder_noise = true
    mc_samples = 1
    dtype = float32

Unknown sections or keys are errors. Every key is optional; omitted keys
take the defaults above. :func:`render` prints the resolved configuration in
the same grammar, prefixed with ``# `` for embedding in CSV headers.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field, fields

from .synth import OUTCOME_KINDS, SETTINGS
from .train import TrainConfig


@dataclass
class SweepConfig:
    n_models: int = 20
    settings: tuple[str, ...] = ("proxy_confounded",)
    outcome_kind: str = "nonlinear_invertible"
    alphas: tuple[float, ...] = (0.2,)
    betas: tuple[float, ...] = (0.2,)
    base_seed: int = 0
    workers: int = 1
    output: str = "sweep.csv"
    normalize_ate: bool = False
    include_naive: bool = True
    mc_draws: int = 100
    n_points: int = 1500
    covariate_dim: int = 3
    train: TrainConfig = field(default_factory=lambda: TrainConfig(dtype="float32"))

    def __post_init__(self):
        self.settings = tuple(self.settings)
        self.alphas = tuple(float(a) for a in self.alphas)
        self.betas = tuple(float(b) for b in self.betas)
        if self.n_models < 1:
            raise ValueError("n_models must be at least 1")
        if not self.settings or not self.alphas or not self.betas:
            raise ValueError("settings, alphas and betas must be non-empty")
        for s in self.settings:
            if s not in SETTINGS:
                raise ValueError(f"unknown setting {s!r}; choose from {SETTINGS}")
        if self.outcome_kind not in OUTCOME_KINDS:
            raise ValueError(f"unknown outcome kind {self.outcome_kind!r}")
        if self.workers < 1 or self.mc_draws < 1:
            raise ValueError("workers and mc_draws must be positive")


_BOOL = {"true": True, "false": False, "yes": True, "no": False, "1": True, "0": False}


def _convert(kind, raw: str, key: str):
    raw = raw.strip()
    try:
        if kind is bool:
            return _BOOL[raw.lower()]
        if kind is int:
            return int(raw)
        if kind is float:
            return math.inf if raw.lower() in ("inf", "infinity") else float(raw)
        if kind == "floats":
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if kind == "ints":
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if kind == "strs":
            return tuple(v.strip() for v in raw.split(",") if v.strip())
        return raw
    except (KeyError, ValueError):
        raise ValueError(f"key {key!r}: cannot parse {raw!r}") from None


_SWEEP_KINDS = {
    "n_models": int, "settings": "strs", "outcome_kind": str, "alphas": "floats", "betas": "floats",
    "base_seed": int, "workers": int, "output": str, "normalize_ate": bool, "include_naive": bool,
    "mc_draws": int, "n_points": int, "covariate_dim": int,
}
_TRAIN_KINDS = {
    "learning_rate": float, "batch_size": int, "max_epochs": int, "patience": float, "min_epochs": int,
    "eval_every": int, "seed": int, "latent_dim": int, "hidden": "ints", "balanced_prior": bool,
    "separate_decoder_heads": bool, "learn_decoder_noise": bool, "mc_samples": int, "dtype": str,
}


def _section(parser, name: str, kinds: dict) -> dict:
    if not parser.has_section(name):
        return {}
    out = {}
    for key, raw in parser.items(name):
        if key not in kinds:
            raise ValueError(f"[{name}] unknown key {key!r}")
        out[key] = _convert(kinds[key], raw, key)
    return out


def parse_config(text: str) -> SweepConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ValueError(f"config syntax: {exc}") from None
    for name in parser.sections():
        if name not in ("sweep", "train"):
            raise ValueError(f"unknown section [{name}]")
    train = TrainConfig(**{"dtype": "float32", **_section(parser, "train", _TRAIN_KINDS)})
    return SweepConfig(**_section(parser, "sweep", _SWEEP_KINDS), train=train)


def load_config(path) -> SweepConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render(cfg: SweepConfig, prefix: str = "") -> str:
    lines = [f"{prefix}[sweep]"]
    for f in fields(cfg):
        if f.name != "train":
            lines.append(f"{prefix}{f.name} = {_fmt(getattr(cfg, f.name))}")
    lines.append(f"{prefix}[train]")
    for f in fields(cfg.train):
        lines.append(f"{prefix}{f.name} = {_fmt(getattr(cfg.train, f.name))}")
    return "\n".join(lines) + "\n"


def with_overrides(cfg: SweepConfig, sweep: dict | None = None, train: dict | None = None) -> SweepConfig:
    """Copy with non-None overrides applied (command-line flags)."""
    t = dataclasses.replace(cfg.train, **{k: v for k, v in (train or {}).items() if v is not None})
    return dataclasses.replace(cfg, **{k: v for k, v in (sweep or {}).items() if v is not None}, train=t)
