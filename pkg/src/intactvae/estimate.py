"""Treatment-effect estimators, error metrics, the naive-regression baseline
and latent-recovery diagnostics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .dataset import CausalDataset
from .model import IntactVae
from .nn import AdamState, Mlp, adam_step


def antithetic_noise(rng: np.random.Generator, draws: int, n: int, dim: int) -> np.ndarray:
    """``draws`` standard-normal draws arranged as +/- pairs (plus a zero draw
    when ``draws`` is odd), so the sample set is symmetric about zero."""
    if draws < 1:
        raise ValueError("need at least one draw")
    half = rng.standard_normal((draws // 2, n, dim))
    parts = [half, -half]
    if draws % 2:
        parts.append(np.zeros((1, n, dim)))
    return np.concatenate(parts, axis=0)


def _decoded_means(m: IntactVae, z: np.ndarray, t_hat: int) -> np.ndarray:
    """Average decoder mean over the leading draw axis of ``z``."""
    draws, n, dim = z.shape
    dec = m.decode(z.reshape(draws * n, dim), np.full(draws * n, t_hat))
    return dec.mean.reshape(draws, n, -1).mean(axis=0)[..., 0]


def predict_outcomes_post(m: IntactVae, x, y, t, mc_draws: int = 100, seed: int = 0):
    """Both potential-outcome predictions from posterior samples of the
    observed unit, pushed through the decoder under t=0 and t=1."""
    q = m.encode(x, y, t)
    noise = antithetic_noise(np.random.default_rng(seed), mc_draws, *q.mean.shape).astype(m.dtype)
    z = q.mean[None] + np.sqrt(q.var)[None] * noise
    return _decoded_means(m, z, 0), _decoded_means(m, z, 1)


def predict_outcomes_pre(m: IntactVae, x, mc_draws: int = 100, seed: int = 0):
    """Pre-treatment predictions: latent samples come from the conditional
    prior given covariates only. A treatment-dependent prior is evaluated at
    the arm being predicted."""
    x = m._x(x)
    rng = np.random.default_rng(seed)
    noise = antithetic_noise(rng, mc_draws, x.shape[0], m.latent_dim).astype(m.dtype)
    out = []
    for t_hat in (0, 1):
        p = m.prior(x, None if m.config.balanced_prior else t_hat)
        z = p.mean[None] + np.sqrt(p.var)[None] * noise
        out.append(_decoded_means(m, z, t_hat))
    return out[0], out[1]


def _truth(ds: CausalDataset, idx):
    if ds.mu0 is None or ds.mu1 is None or not (np.all(np.isfinite(ds.mu0[idx])) and np.all(np.isfinite(ds.mu1[idx]))):
        raise ValueError("dataset lacks potential-outcome ground truth")
    return ds.mu1[idx] - ds.mu0[idx]


def _effects(predictions, n):
    y0, y1 = (np.asarray(p, dtype=float).reshape(-1) for p in predictions)
    if y0.shape != (n,) or y1.shape != (n,):
        raise ValueError(f"predictions must hold {n} entries per arm")
    return y1 - y0


def ate_error(predictions, ds: CausalDataset, idx=None) -> float:
    """Absolute difference between true and predicted average effect."""
    idx = np.arange(len(ds)) if idx is None else idx
    true = _truth(ds, idx)
    est = _effects(predictions, true.size)
    return abs(float(np.mean(true)) - float(np.mean(est)))


def pehe(predictions, ds: CausalDataset, idx=None) -> float:
    """Root mean squared error of per-unit effects (reported as sqrt PEHE)."""
    idx = np.arange(len(ds)) if idx is None else idx
    true = _truth(ds, idx)
    est = _effects(predictions, true.size)
    return float(np.sqrt(np.mean((true - est) ** 2)))


@dataclass
class AffineFit:
    slope: float
    intercept: float
    r_squared: float


def affine_recovery_fit(z_recovered, z_true, t) -> dict[int, AffineFit]:
    """Least-squares line of recovered on true latent within each treatment group."""
    zr = np.asarray(z_recovered, dtype=float).reshape(-1)
    zt = np.asarray(z_true, dtype=float).reshape(-1)
    t = np.asarray(t).reshape(-1)
    if not (zr.shape == zt.shape == t.shape):
        raise ValueError("recovery fit needs 1-d latents and one treatment per unit")
    fits = {}
    for tv in (0, 1):
        a, b = zt[t == tv], zr[t == tv]
        if a.size < 2:
            raise ValueError(f"treatment group {tv} has fewer than two units")
        va = np.var(a)
        if va <= 1e-15 * max(1.0, float(np.mean(a * a))):
            raise ValueError(f"true latent is constant in group {tv}; fit undefined")
        slope = float(np.mean((a - a.mean()) * (b - b.mean())) / va)
        intercept = float(b.mean() - slope * a.mean())
        resid = b - (slope * a + intercept)
        vb = np.var(b)
        r2 = 1.0 - float(np.mean(resid**2) / vb) if vb > 0 else 0.0
        fits[tv] = AffineFit(slope, intercept, max(0.0, r2))
    return fits


# -- naive regression baseline ---------------------------------------------------------


@dataclass
class NaiveConfig:
    hidden: tuple[int, ...] = (200, 200, 200)
    learning_rate: float = 1e-4
    batch_size: int = 100
    max_epochs: int = 500
    patience: float = 20
    seed: int = 0
    dtype: str = "float64"


def _mse_grad(net: Mlp, x, y):
    pred, tape = net.forward(x, return_tape=True)
    err = pred[:, 0] - y
    grads, _ = net.backward(tape, (2.0 / y.size) * err[:, None])
    return float(np.mean(err**2)), grads


def fit_outcome_regression(ds: CausalDataset, cfg: NaiveConfig) -> tuple[Mlp, dict]:
    """Regress y on (x, t) with Adam, early-stopped on validation MSE."""
    tr, va = ds.indices("train"), ds.indices("valid")
    if tr.size == 0 or va.size == 0:
        raise ValueError("dataset needs non-empty train and valid splits")
    dtype = np.dtype(cfg.dtype)
    feats = np.hstack([ds.x, ds.t[:, None]]).astype(dtype)
    y = ds.y.astype(dtype)
    net = Mlp([feats.shape[1], *cfg.hidden, 1], "relu", seed=cfg.seed, dtype=dtype)
    params = net.params()
    opt = AdamState.for_params(params, learning_rate=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    best, best_val, best_epoch, since = [p.copy() for p in params], math.inf, 0, 0
    history = []
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(tr)
        for start in range(0, order.size, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = _mse_grad(net, feats[idx], y[idx])
            if not math.isfinite(loss):
                raise FloatingPointError(f"naive regression diverged at epoch {epoch}")
            adam_step(opt, params, grads)
        val = float(np.mean((net.forward(feats[va])[:, 0] - y[va]) ** 2))
        history.append(val)
        if val < best_val:
            best, best_val, best_epoch, since = [p.copy() for p in params], val, epoch, 0
        else:
            since += 1
            if since >= cfg.patience:
                break
    net.set_params(best)
    return net, {"best_epoch": best_epoch, "best_valid_mse": best_val, "valid_mse": history}


def naive_regression_baseline(ds: CausalDataset, cfg: NaiveConfig | None = None, net: Mlp | None = None):
    """Per-unit (y0_hat, y1_hat) from a plain regression of y on (x, t)."""
    if net is None:
        net, _ = fit_outcome_regression(ds, cfg or NaiveConfig())
    n = len(ds)
    x = ds.x.astype(net.dtype)
    y0 = net.forward(np.hstack([x, np.zeros((n, 1), dtype=net.dtype)]))[:, 0]
    y1 = net.forward(np.hstack([x, np.ones((n, 1), dtype=net.dtype)]))[:, 0]
    return y0.astype(float), y1.astype(float)


# -- reports ------------------------------------------------------------------------------


@dataclass
class EvalReport:
    method: str
    seed: int
    setting: str
    alpha: float
    beta: float
    latent_dim: int
    eps_ate_pre: float
    eps_ate_post: float
    pehe_pre: float
    pehe_post: float
    fit_t0_slope: float = math.nan
    fit_t0_intercept: float = math.nan
    fit_t0_r2: float = math.nan
    fit_t1_slope: float = math.nan
    fit_t1_intercept: float = math.nan
    fit_t1_r2: float = math.nan
    best_epoch: int = 0
    status: str = "ok"
    extra: dict = field(default_factory=dict, repr=False)

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls) if f.name != "extra"]

    def row(self) -> dict:
        d = asdict(self)
        d.pop("extra")
        return d


def _meta(ds: CausalDataset):
    md = ds.meta
    return int(md.get("seed", 0)), str(md.get("setting", "")), float(md.get("alpha", math.nan)), float(md.get("beta", math.nan))


def evaluate_model(m: IntactVae, ds: CausalDataset, mc_draws: int = 100, seed: int = 0, best_epoch: int = 0) -> EvalReport:
    """Post-treatment metrics on train+valid, pre-treatment on test, and the
    per-group affine fit of the posterior mean on the true latent."""
    post_idx = ds.indices("train", "valid")
    test_idx = ds.indices("test")
    post = predict_outcomes_post(m, ds.x[post_idx], ds.y[post_idx], ds.t[post_idx], mc_draws, seed)
    pre = predict_outcomes_pre(m, ds.x[test_idx], mc_draws, seed)
    s, setting, alpha, beta = _meta(ds)
    rep = EvalReport(
        "intact_vae", s, setting, alpha, beta, m.latent_dim,
        ate_error(pre, ds, test_idx), ate_error(post, ds, post_idx),
        pehe(pre, ds, test_idx), pehe(post, ds, post_idx), best_epoch=best_epoch,
    )
    if m.latent_dim == 1 and ds.z_true.shape[1] == 1:
        zr = m.encode(ds.x[post_idx], ds.y[post_idx], ds.t[post_idx]).mean[:, 0]
        try:
            fits = affine_recovery_fit(zr, ds.z_true[post_idx, 0], ds.t[post_idx])
        except ValueError:
            fits = None
        if fits:
            rep.fit_t0_slope, rep.fit_t0_intercept, rep.fit_t0_r2 = fits[0].slope, fits[0].intercept, fits[0].r_squared
            rep.fit_t1_slope, rep.fit_t1_intercept, rep.fit_t1_r2 = fits[1].slope, fits[1].intercept, fits[1].r_squared
    return rep


def evaluate_predictions(method: str, predictions, ds: CausalDataset, latent_dim: int = 0, best_epoch: int = 0) -> EvalReport:
    """Report for an estimator that predicts both arms for every unit."""
    y0, y1 = (np.asarray(p, dtype=float) for p in predictions)
    post_idx = ds.indices("train", "valid")
    test_idx = ds.indices("test")
    s, setting, alpha, beta = _meta(ds)
    return EvalReport(
        method, s, setting, alpha, beta, latent_dim,
        ate_error((y0[test_idx], y1[test_idx]), ds, test_idx),
        ate_error((y0[post_idx], y1[post_idx]), ds, post_idx),
        pehe((y0[test_idx], y1[test_idx]), ds, test_idx),
        pehe((y0[post_idx], y1[post_idx]), ds, post_idx),
        best_epoch=best_epoch,
    )
