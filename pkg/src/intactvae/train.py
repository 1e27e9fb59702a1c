"""Mini-batch Adam ascent on the ELBO with validation early stopping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import CausalDataset
from .model import IntactVae, VaeConfig
from .nn import AdamState, adam_step


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 100
    max_epochs: int = 500
    patience: float = 20
    # early stopping is suspended before this epoch; the posterior often sits
    # on a collapsed plateau for the first few dozen epochs
    min_epochs: int = 100
    eval_every: int = 1
    seed: int = 0
    latent_dim: int = 1
    hidden: tuple[int, ...] = (200, 200, 200)
    balanced_prior: bool = True
    separate_decoder_heads: bool = False
    learn_decoder_noise: bool = True
    mc_samples: int = 1
    dtype: str = "float64"

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        for name in ("batch_size", "max_epochs", "eval_every", "mc_samples", "latent_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.min_epochs < 0:
            raise ValueError("min_epochs must be nonnegative")
        if self.patience <= 0:
            raise ValueError("patience must be positive")


@dataclass
class TrainTrace:
    train_elbo: list[float] = field(default_factory=list)
    valid_elbo: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_valid_elbo: float = -math.inf
    stopped_epoch: int = 0


def make_model(ds: CausalDataset, cfg: TrainConfig, seed: int | None = None) -> IntactVae:
    return IntactVae(
        VaeConfig(
            x_dim=ds.x_dim,
            latent_dim=cfg.latent_dim,
            hidden=cfg.hidden,
            balanced_prior=cfg.balanced_prior,
            separate_decoder_heads=cfg.separate_decoder_heads,
            learn_decoder_noise=cfg.learn_decoder_noise,
            seed=cfg.seed if seed is None else seed,
            dtype=cfg.dtype,
        )
    )


def _split_arrays(ds: CausalDataset, idx, dtype):
    return ds.x[idx].astype(dtype), ds.y[idx].astype(dtype), ds.t[idx]


def train(m: IntactVae, ds: CausalDataset, cfg: TrainConfig) -> tuple[IntactVae, TrainTrace]:
    """Train ``m`` in place on the train split; restore the parameters with the
    best validation ELBO (evaluated with a fixed noise draw after each
    ``eval_every`` epochs)."""
    tr = ds.indices("train")
    va = ds.indices("valid")
    if tr.size == 0 or va.size == 0:
        raise ValueError("dataset needs non-empty train and valid splits")
    dtype = m.dtype
    xt, yt, tt = _split_arrays(ds, tr, dtype)
    xv, yv, tv = _split_arrays(ds, va, dtype)

    ss = np.random.SeedSequence(cfg.seed)
    rng_batches, rng_eval = (np.random.default_rng(s) for s in ss.spawn(2))
    eval_noise = m.draw_noise(rng_eval, va.size, cfg.mc_samples)
    params = m.param_list()
    opt = AdamState.for_params(params, learning_rate=cfg.learning_rate)

    trace = TrainTrace()
    best = m.snapshot()
    since_best = 0
    n = tr.size
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng_batches.permutation(n)
        total, count = 0.0, 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            noise = m.draw_noise(rng_batches, idx.size, cfg.mc_samples)
            try:
                terms = m.elbo(xt[idx], yt[idx], tt[idx], noise)
                # Adam descends, the ELBO is ascended
                adam_step(opt, params, [-g for g in m.grad_list(terms.grads)])
            except FloatingPointError as exc:
                raise FloatingPointError(f"epoch {epoch}, batch {b}: {exc}") from exc
            total += terms.elbo * idx.size
            count += idx.size
        trace.train_elbo.append(total / count)
        trace.stopped_epoch = epoch
        if epoch % cfg.eval_every and epoch != cfg.max_epochs:
            continue
        val = m.elbo(xv, yv, tv, eval_noise, with_grads=False).elbo
        trace.valid_elbo.append(val)
        if val > trace.best_valid_elbo:
            trace.best_valid_elbo = val
            trace.best_epoch = epoch
            best = m.snapshot()
            since_best = 0
        else:
            since_best += cfg.eval_every
            if since_best >= cfg.patience and epoch >= cfg.min_epochs:
                break
    m.restore(best)
    return m, trace
