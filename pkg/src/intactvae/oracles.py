"""Independent numerical checks behind the ``selftest`` command.

Each check returns an :class:`OracleResult`; :func:`run_selftest` runs them
all (well under a minute on one core).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gaussian import (
    DiagGaussian,
    LOG_2PI,
    inverse_positive_variance,
    kl_divergence,
    kl_grads,
    log_prob,
    log_prob_grads,
)
from .model import IntactVae, VaeConfig
from .nn import Mlp, grad_check, relative_error

GRAD_TOL = 1e-4


@dataclass
class OracleResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name} value={self.value:.3e} threshold={self.threshold:.1e} {self.detail}".rstrip()


# -- gradients ----------------------------------------------------------------------


def check_mlp_gradients(seed: int = 0) -> list[OracleResult]:
    rng = np.random.default_rng(seed)
    out = []
    for act, pos in (("relu", False), ("identity", False), ("invertible_smooth", False), ("invertible_smooth", True)):
        net = Mlp([3, 5, 4, 2], act, seed=int(rng.integers(2**31)), positive_weights=pos)
        x = rng.standard_normal((6, 3))
        rep = grad_check(net, x, GRAD_TOL, seed=seed)
        tag = act + ("+positive" if pos else "")
        out.append(OracleResult(f"grad_mlp_{tag}", rep.passed, rep.worst_relative_error, GRAD_TOL))
    return out


def _fd(fun, arr, step=1e-6):
    """Central differences of a scalar function w.r.t. every entry of ``arr``."""
    g = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        orig = arr[idx]
        arr[idx] = orig + step
        up = fun()
        arr[idx] = orig - step
        down = fun()
        arr[idx] = orig
        g[idx] = (up - down) / (2 * step)
    return g


def check_density_gradients(seed: int = 0) -> list[OracleResult]:
    rng = np.random.default_rng(seed)
    m, v, x = rng.standard_normal((4, 3)), rng.uniform(0.3, 2.0, (4, 3)), rng.standard_normal((4, 3))
    ga = log_prob_grads(DiagGaussian(m, v), x)
    worst = 0.0
    for arr, g in zip((m, v, x), ga):
        num = _fd(lambda: float(np.sum(log_prob(DiagGaussian(m, v), x))), arr)
        worst = max(worst, float(np.max(relative_error(g, num))))
    res = [OracleResult("grad_log_prob", worst <= GRAD_TOL, worst, GRAD_TOL)]

    qm, qv = rng.standard_normal((4, 2)), rng.uniform(0.3, 2.0, (4, 2))
    pm, pv = rng.standard_normal((4, 2)), rng.uniform(0.3, 2.0, (4, 2))
    ga = kl_grads(DiagGaussian(qm, qv), DiagGaussian(pm, pv))
    worst = 0.0
    for arr, g in zip((qm, qv, pm, pv), ga):
        num = _fd(lambda: float(np.sum(kl_divergence(DiagGaussian(qm, qv), DiagGaussian(pm, pv)))), arr)
        worst = max(worst, float(np.max(relative_error(g, num))))
    res.append(OracleResult("grad_kl", worst <= GRAD_TOL, worst, GRAD_TOL))
    return res


def extended_precision_copy(m: IntactVae) -> IntactVae:
    """The same model evaluated in ``np.longdouble``."""
    ext = m.copy()
    ext.config.dtype = "longdouble"
    ext.nets = {k: net.astype(np.longdouble) for k, net in m.nets.items()}
    ext.latent_var_scale = m.latent_var_scale.astype(np.longdouble)
    return ext


def elbo_grad_error(m: IntactVae, x, y, t, noise, step: float = 1e-6, floor: float = 1e-8) -> float:
    """Worst relative error between the hand-assembled ELBO gradient and
    central differences, over every parameter of every head. Differences are
    taken in extended precision so small gradient entries are resolved."""
    analytic = m.grad_list(m.elbo(x, y, t, noise).grads)
    ext = extended_precision_copy(m)
    worst = 0.0
    for p, g in zip(ext.param_list(), analytic):
        num = _fd(lambda: ext.elbo(x, y, t, noise, with_grads=False).elbo, p, step)
        worst = max(worst, float(np.max(relative_error(g, num, floor))))
    return worst


def jitter_parameters(m: IntactVae, rng, scale: float = 0.1) -> None:
    """Zero-initialized biases put ReLU units exactly on their kink, where a
    finite difference is one-sided; a small perturbation moves them off it."""
    for p in m.param_list():
        p += scale * rng.standard_normal(p.shape)


def check_elbo_gradients(seed: int = 0) -> list[OracleResult]:
    rng = np.random.default_rng(seed)
    configs = {
        "shared": {},
        "separate_heads": {"separate_decoder_heads": True},
        "unbalanced": {"balanced_prior": False},
        "fixed_noise": {"learn_decoder_noise": False},
        "latent2_mc3": {"latent_dim": 2},
    }
    out = []
    for name, kw in configs.items():
        cfg = VaeConfig(x_dim=2, hidden=(5, 4), seed=int(rng.integers(2**31)), **kw)
        m = IntactVae(cfg)
        jitter_parameters(m, rng)
        n = 7
        x, y = rng.standard_normal((n, 2)), rng.standard_normal((n, 1))
        t = rng.integers(0, 2, n)
        t[:2] = (0, 1)
        noise = rng.standard_normal((3 if name == "latent2_mc3" else 1, n, cfg.latent_dim))
        err = elbo_grad_error(m, x, y, t, noise)
        out.append(OracleResult(f"grad_elbo_{name}", err <= GRAD_TOL, err, GRAD_TOL))
    return out


# -- KL against Monte Carlo ------------------------------------------------------------


def kl_monte_carlo(q: DiagGaussian, p: DiagGaussian, n_samples: int, rng) -> tuple[float, float]:
    """Mean and standard error of log q(z) - log p(z) for z ~ q."""
    z = q.mean + q.std * rng.standard_normal((n_samples, q.dim))
    vals = log_prob(q, z) - log_prob(p, z)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_samples))


def check_kl_monte_carlo(seed: int = 0, n_samples: int = 100_000) -> list[OracleResult]:
    rng = np.random.default_rng(seed)
    cases = [(DiagGaussian(np.zeros(1), np.full(1, 4.0)), DiagGaussian(np.zeros(1), np.ones(1)))]
    for _ in range(4):
        d = int(rng.integers(1, 4))
        cases.append(
            (
                DiagGaussian(rng.standard_normal(d), rng.uniform(0.2, 3.0, d)),
                DiagGaussian(rng.standard_normal(d), rng.uniform(0.2, 3.0, d)),
            )
        )
    out = []
    for i, (q, p) in enumerate(cases):
        exact = float(kl_divergence(q, p))
        mc, se = kl_monte_carlo(q, p, n_samples, rng)
        z = abs(mc - exact) / se
        out.append(OracleResult(f"kl_mc_case{i}", z <= 3.0, z, 3.0, f"(|mc-exact|/se; exact={exact:.6f})"))
    return out


# -- linear-Gaussian ELBO ---------------------------------------------------------------


@dataclass
class LinearGaussian:
    """z | x ~ N(c x + d, kv);  y | z, t ~ N(a z + e t + b, g)."""

    a: float = 1.3
    b: float = -0.4
    e: float = 0.7
    c: float = 0.8
    d: float = 0.2
    kv: float = 0.6
    g: float = 0.3

    def marginal(self, x, t) -> DiagGaussian:
        mean = self.a * (self.c * x + self.d) + self.e * t + self.b
        return DiagGaussian(mean[:, None], np.full((len(x), 1), self.a**2 * self.kv + self.g))

    def log_marginal(self, x, y, t) -> np.ndarray:
        return log_prob(self.marginal(x, t), y.reshape(-1, 1))

    def posterior_coefficients(self) -> tuple[np.ndarray, float, float]:
        """Encoder weights on (x, y, t), bias and variance of the exact posterior."""
        prec = 1.0 / self.kv + self.a**2 / self.g
        w_prior = 1.0 / (self.kv * prec)
        w_obs = self.a / (self.g * prec)
        weights = np.array([self.c * w_prior, w_obs, -self.e * w_obs])
        bias = self.d * w_prior - self.b * w_obs
        return weights, bias, 1.0 / prec


def linear_gaussian_model(lg: LinearGaussian) -> IntactVae:
    """An affine Intact-VAE (no hidden layers) set to the generating law, with
    the encoder at the exact posterior."""
    m = IntactVae(VaeConfig(x_dim=1, hidden=(), learn_decoder_noise=False, decoder_variance=lg.g))
    f, h, k, r, s = (m.nets[n] for n in "fhkrs")
    f.weights[0][:] = [[lg.a], [lg.e]]
    f.biases[0][:] = lg.b
    h.weights[0][:] = lg.c
    h.biases[0][:] = lg.d
    k.weights[0][:] = 0.0
    k.biases[0][:] = inverse_positive_variance(lg.kv)
    w, bias, var = lg.posterior_coefficients()
    r.weights[0][:] = w[:, None]
    r.biases[0][:] = bias
    s.weights[0][:] = 0.0
    s.biases[0][:] = inverse_positive_variance(var)
    return m


def exact_expectation_noise(n: int) -> np.ndarray:
    """Draws +1 and -1: the sample mean of any quadratic in z is then exact."""
    return np.stack([np.ones((n, 1)), -np.ones((n, 1))])


def check_linear_gaussian_elbo(seed: int = 0, n_perturbed: int = 200) -> list[OracleResult]:
    rng = np.random.default_rng(seed)
    lg = LinearGaussian()
    n = 50
    x = rng.standard_normal(n)
    t = rng.integers(0, 2, n)
    z = lg.c * x + lg.d + math.sqrt(lg.kv) * rng.standard_normal(n)
    y = lg.a * z + lg.e * t + lg.b + math.sqrt(lg.g) * rng.standard_normal(n)
    target = float(np.mean(lg.log_marginal(x, y, t)))
    m = linear_gaussian_model(lg)
    noise = exact_expectation_noise(n)
    at_opt = m.elbo(x[:, None], y, t, noise, with_grads=False).elbo
    gap = abs(at_opt - target)
    out = [OracleResult("linear_gaussian_elbo_at_optimum", gap <= 1e-3, gap, 1e-3, f"(log p={target:.6f})")]

    worst = -math.inf
    base = [p.copy() for p in m.param_list()]
    for _ in range(n_perturbed):
        for name in ("r", "s"):
            for p in m.nets[name].params():
                p += rng.normal(0.0, 0.5, p.shape)
        excess = m.elbo(x[:, None], y, t, noise, with_grads=False).elbo - target
        worst = max(worst, excess)
        m.restore([p.copy() for p in base])
    out.append(OracleResult("linear_gaussian_elbo_bound", worst <= 1e-9, worst, 1e-9, "(max elbo - log p)"))
    return out


def run_selftest(seed: int = 0) -> list[OracleResult]:
    results = []
    results += check_mlp_gradients(seed)
    results += check_density_gradients(seed)
    results += check_elbo_gradients(seed)
    results += check_kl_monte_carlo(seed)
    results += check_linear_gaussian_elbo(seed)
    return results
