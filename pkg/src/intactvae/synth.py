"""Synthetic benchmark with a hidden latent, three causal settings and
linear or invertible-nonlinear outcome maps.

    x ~ prod_i N(mu_i, sigma_i^2)
    z | x ~ N(h(x), beta * k(x))
    t | x, z ~ Bernoulli(logistic(l(x, z)))
    y | z, t ~ N(f_t(z) / C_t, alpha)

Settings: ``proxy_confounded`` (l depends on z only, x is a proxy of z),
``ignorable`` (l depends on x only) and ``instrumental`` (z is generated from
an extra 1-d source w, l depends on x and z, so x acts as an instrument).

Random-coefficient conventions (all coefficients uniform on (-1, 1) unless
noted):

* mu_i ~ U(-0.2, 0.2), sigma_i ~ U(0, 0.2) (standard deviations).
* h is affine in standardized inputs and rescaled to unit standard deviation
  over a pilot sample, so its range matches that of the normalized k.
* the latent variance is ``beta * softplus(k(x)) / mean_pilot(softplus(k))``.
* l is affine in standardized inputs, then scaled so the most extreme pilot
  propensity is exactly 0.05 or 0.95.
* linear f_t(z) = a_t z + b_t with |a_t| >= 1e-3; nonlinear f_t is a
  1-8-8-1 network with ``x + tanh(x)`` activations and positive weights times
  a random sign, hence strictly monotone.
* C_t is the standard deviation of f_t(z) over the pilot units with
  treatment t, so the normalized group-wise outcome mean has unit variance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .dataset import CausalDataset, three_way_split
from .gaussian import sigmoid, softplus
from .nn import Mlp

SETTINGS = ("proxy_confounded", "instrumental", "ignorable")
OUTCOME_KINDS = ("linear", "nonlinear_invertible")
PROPENSITY_BOUND = 0.95


class QuadratureWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class SynthSpec:
    seed: int
    setting: str = "proxy_confounded"
    outcome_kind: str = "nonlinear_invertible"
    alpha: float = 0.2
    beta: float = 0.2
    covariate_dim: int = 3
    n_points: int = 1500
    pilot_size: int = 2000

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"unknown setting {self.setting!r}; choose from {SETTINGS}")
        if self.outcome_kind not in OUTCOME_KINDS:
            raise ValueError(f"unknown outcome kind {self.outcome_kind!r}; choose from {OUTCOME_KINDS}")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if self.beta < 0.0:
            raise ValueError("beta must be nonnegative")
        if self.covariate_dim < 1 or self.n_points < 3 or self.pilot_size < 10:
            raise ValueError("covariate_dim, n_points and pilot_size are too small")


@dataclass
class _Affine:
    """``coef @ ((v - center) / scale) + bias``"""

    coef: np.ndarray
    bias: float
    center: np.ndarray
    scale: np.ndarray

    def __call__(self, v: np.ndarray) -> np.ndarray:
        return ((v - self.center) / self.scale) @ self.coef + self.bias


class GeneratingModel:
    """The random functions and constants behind one synthetic benchmark."""

    def __init__(self, spec: SynthSpec):
        self.spec = spec
        rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(2)[0])
        m = spec.covariate_dim
        # every draw is made regardless of setting so that equal seeds share
        # covariate laws and outcome maps across settings
        self.x_mean = rng.uniform(-0.2, 0.2, m)
        self.x_sd = rng.uniform(0.0, 0.2, m)
        self.x_sd[self.x_sd < 1e-3] = 1e-3
        self.w_mean = rng.uniform(-0.2, 0.2)
        self.w_sd = max(rng.uniform(0.0, 0.2), 1e-3)
        h_coef_x, h_coef_w = rng.uniform(-1, 1, m), rng.uniform(-1, 1, 1)
        h_bias = rng.uniform(-1, 1)
        k_coef_x, k_coef_w = rng.uniform(-1, 1, m), rng.uniform(-1, 1, 1)
        k_bias = rng.uniform(-1, 1)
        l_coef = rng.uniform(-1, 1, m + 1)
        l_bias = rng.uniform(-1, 1)
        self.f_linear = []
        for _ in range(2):
            a = rng.uniform(-1, 1)
            while abs(a) < 1e-3:
                a = rng.uniform(-1, 1)
            self.f_linear.append((a, rng.uniform(-1, 1)))
        self.f_nets = []
        for _ in range(2):
            net = Mlp([1, 8, 8, 1], "invertible_smooth", seed=int(rng.integers(2**63)), positive_weights=True)
            for b in net.biases[:-1]:
                b[:] = rng.uniform(-1, 1, b.shape)
            sign = 1.0 if rng.uniform() < 0.5 else -1.0
            self.f_nets.append((net, sign))
        pilot_rng = np.random.default_rng(rng.integers(2**63))

        # -- pilot-based normalization -------------------------------------------
        px = self.sample_x(pilot_rng, spec.pilot_size)
        ps = self.source(px, self.sample_w(pilot_rng, spec.pilot_size))
        s_center, s_scale = ps.mean(axis=0), ps.std(axis=0)
        if self.instrumental:
            h_coef, k_coef = h_coef_w, k_coef_w
        else:
            h_coef, k_coef = h_coef_x, k_coef_x
        self.h = _Affine(h_coef, 0.0, s_center, s_scale)
        raw_h = self.h(ps)
        self.h = _Affine(h_coef / raw_h.std(), h_bias, s_center, s_scale)
        self.k = _Affine(k_coef, k_bias, s_center, s_scale)
        self.k_norm = float(np.mean(softplus(self.k(ps))))
        pz = self.h(ps) + np.sqrt(self.latent_var(ps)) * pilot_rng.standard_normal(spec.pilot_size)

        lv = self._logit_input(px, pz)
        mask = self._logit_mask()
        self.l = _Affine(l_coef * mask, 0.0, lv.mean(axis=0), lv.std(axis=0) + 1e-12)
        raw_l = self.l(lv) + l_bias
        self.l_scale = np.log(PROPENSITY_BOUND / (1 - PROPENSITY_BOUND)) / np.max(np.abs(raw_l))
        self.l_bias = l_bias
        pt = (pilot_rng.uniform(size=spec.pilot_size) < self.propensity(px, pz)).astype(int)

        self.C = np.ones(2)
        for tv in (0, 1):
            grp = pz[pt == tv] if np.sum(pt == tv) > 1 else pz
            self.C[tv] = float(np.std(self.f(grp, tv)))
            if self.C[tv] < 1e-12:
                self.C[tv] = 1.0

    @property
    def instrumental(self) -> bool:
        return self.spec.setting == "instrumental"

    def sample_x(self, rng, n) -> np.ndarray:
        return self.x_mean + self.x_sd * rng.standard_normal((n, self.spec.covariate_dim))

    def sample_w(self, rng, n) -> np.ndarray:
        return self.w_mean + self.w_sd * rng.standard_normal((n, 1))

    def source(self, x, w) -> np.ndarray:
        """The variable the latent is generated from."""
        return w if self.instrumental else x

    def latent_mean(self, s) -> np.ndarray:
        return self.h(s)

    def latent_var(self, s) -> np.ndarray:
        return self.spec.beta * softplus(self.k(s)) / self.k_norm

    def _logit_mask(self) -> np.ndarray:
        m = self.spec.covariate_dim
        mask = np.ones(m + 1)
        if self.spec.setting == "proxy_confounded":
            mask[:m] = 0.0
        elif self.spec.setting == "ignorable":
            mask[m] = 0.0
        return mask

    @staticmethod
    def _logit_input(x, z) -> np.ndarray:
        return np.hstack([x, np.reshape(z, (-1, 1))])

    def logit(self, x, z) -> np.ndarray:
        return self.l_scale * (self.l(self._logit_input(x, z)) + self.l_bias)

    def propensity(self, x, z) -> np.ndarray:
        return sigmoid(self.logit(x, z))

    def f(self, z, t: int) -> np.ndarray:
        """Unnormalized outcome map."""
        z = np.asarray(z, dtype=float)
        if self.spec.outcome_kind == "linear":
            a, b = self.f_linear[t]
            return a * z + b
        net, sign = self.f_nets[t]
        return sign * net.forward(z.reshape(-1, 1))[:, 0].reshape(z.shape)

    def outcome_mean(self, z, t: int) -> np.ndarray:
        return self.f(z, t) / self.C[t]


def build_generating_model(spec: SynthSpec) -> GeneratingModel:
    return GeneratingModel(spec)


def generate(spec: SynthSpec, model: GeneratingModel | None = None) -> CausalDataset:
    model = model or GeneratingModel(spec)
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(2)[1])
    n = spec.n_points
    x = model.sample_x(rng, n)
    w = model.sample_w(rng, n)
    s = model.source(x, w)
    z = model.latent_mean(s) + np.sqrt(model.latent_var(s)) * rng.standard_normal(n)
    prop = model.propensity(x, z)
    t = (rng.uniform(size=n) < prop).astype(np.int64)
    mu0 = model.outcome_mean(z, 0)
    mu1 = model.outcome_mean(z, 1)
    noise_sd = np.sqrt(spec.alpha)
    y0 = mu0 + noise_sd * rng.standard_normal(n)
    y1 = mu1 + noise_sd * rng.standard_normal(n)
    y = np.where(t == 1, y1, y0)
    split = three_way_split(n, rng)
    meta = {
        "seed": spec.seed, "setting": spec.setting, "outcome_kind": spec.outcome_kind,
        "alpha": spec.alpha, "beta": spec.beta,
    }
    return CausalDataset(x, t, y, y0, y1, mu0, mu1, z[:, None], prop, split, meta)


def _gh(n_nodes: int):
    nodes, weights = np.polynomial.hermite_e.hermegauss(n_nodes)
    return nodes, weights / np.sqrt(2 * np.pi)


def conditional_outcome_means(model: GeneratingModel, x_query, n_nodes: int = 120, check: bool = True) -> np.ndarray:
    """mu_t(x) = E[f_t(z) / C_t | x] for t = 0, 1 by Gauss-Hermite quadrature
    over the generating law of z given x. Returns shape ``(n, 2)``."""
    x = np.atleast_2d(np.asarray(x_query, dtype=float))
    out = _quadrature(model, x, n_nodes)
    if check:
        # hermegauss weights overflow beyond ~300 nodes
        ref = _quadrature(model, x, min(2 * n_nodes, 250))
        err = float(np.max(np.abs(out - ref)))
        if err > 1e-6 * max(1.0, float(np.max(np.abs(ref)))):
            warnings.warn(f"quadrature not converged (change {err:.3g} on doubling nodes)", QuadratureWarning)
        out = ref
    return out


def _quadrature(model: GeneratingModel, x, n_nodes):
    nodes, weights = _gh(n_nodes)
    if model.instrumental:
        # z does not depend on x: integrate over the source w as well
        w = (model.w_mean + model.w_sd * nodes).reshape(-1, 1)
        zm, zs = model.latent_mean(w), np.sqrt(model.latent_var(w))
        zz = zm[:, None] + zs[:, None] * nodes[None, :]
        ww = weights[:, None] * weights[None, :]
        res = [float(np.sum(ww * model.outcome_mean(zz, tv))) for tv in (0, 1)]
        return np.tile(res, (x.shape[0], 1))
    zm, zs = model.latent_mean(x), np.sqrt(model.latent_var(x))
    zz = zm[:, None] + zs[:, None] * nodes[None, :]
    return np.stack([model.outcome_mean(zz, tv) @ weights for tv in (0, 1)], axis=1)


def true_cate(model: GeneratingModel, x_query, n_nodes: int = 120) -> np.ndarray:
    mu = conditional_outcome_means(model, x_query, n_nodes)
    return mu[:, 1] - mu[:, 0]


def true_ate(ds: CausalDataset, idx=None) -> float:
    return float(np.mean(ds.true_effects(idx)))


def normalize_ate(datasets: list[CausalDataset]) -> tuple[list[CausalDataset], float]:
    """Divide the outcomes of every dataset by the standard deviation of the
    true ATEs across the batch. Batches of one, or with identical ATEs, are
    returned unchanged with factor 1."""
    if len(datasets) < 2:
        return list(datasets), 1.0
    sd = float(np.std([true_ate(d) for d in datasets]))
    if not np.isfinite(sd) or sd <= 1e-12:
        return list(datasets), 1.0
    return [d.scaled(sd) for d in datasets], sd
