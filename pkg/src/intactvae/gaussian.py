"""Factorized Gaussian densities, closed-form KL and reparameterized sampling.

All functions broadcast over leading batch axes; the last axis is the event
dimension and is summed over.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

VARIANCE_FLOOR = 1e-4
LOG_2PI = float(np.log(2.0 * np.pi))


def softplus(a):
    return np.logaddexp(0.0, a)


def sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(a)))


def positive_variance(raw, floor: float = VARIANCE_FLOOR):
    """Map unconstrained network output to a variance ``softplus(raw) + floor``."""
    return softplus(raw) + floor


def positive_variance_grad(raw):
    return sigmoid(raw)


def inverse_positive_variance(var, floor: float = VARIANCE_FLOOR):
    """Raw value whose :func:`positive_variance` is ``var``."""
    v = np.asarray(var, dtype=float) - floor
    if np.any(v <= 0):
        raise ValueError(f"variance must exceed the floor {floor}")
    return np.where(v > 30.0, v, np.log(np.expm1(np.minimum(v, 30.0))))


@dataclass(frozen=True)
class DiagGaussian:
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean)
        var = np.asarray(self.var)
        if not np.issubdtype(mean.dtype, np.floating):
            mean = mean.astype(float)
        if not np.issubdtype(var.dtype, np.floating):
            var = var.astype(float)
        if mean.shape != var.shape:
            raise ValueError(f"mean shape {mean.shape} != variance shape {var.shape}")
        # the floor is enforced by positive_variance; an affine latent
        # reparameterization may legitimately scale below it
        if not np.all(var > 0):
            raise ValueError("variances must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    @property
    def dim(self) -> int:
        return self.mean.shape[-1] if self.mean.ndim else 1

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.var)

    def affine(self, scale, shift) -> "DiagGaussian":
        """Distribution of ``scale * z + shift`` for ``z`` from this one."""
        scale = np.asarray(scale, dtype=self.mean.dtype)
        return DiagGaussian(self.mean * scale + shift, self.var * scale * scale)


def _check(a, b, what: str):
    if np.shape(a)[-1:] != np.shape(b)[-1:]:
        raise ValueError(f"{what}: dimension mismatch {np.shape(a)} vs {np.shape(b)}")


def log_prob(d: DiagGaussian, x) -> np.ndarray:
    """Log-density of ``x``, summed over the event dimension."""
    x = np.asarray(x)
    _check(d.mean, x, "log_prob")
    return -0.5 * np.sum(LOG_2PI + np.log(d.var) + (x - d.mean) ** 2 / d.var, axis=-1)


def log_prob_grads(d: DiagGaussian, x):
    """Partial derivatives of :func:`log_prob` w.r.t. (mean, var, x), elementwise."""
    r = np.asarray(x) - d.mean
    g_mean = r / d.var
    g_var = 0.5 * (r * r / d.var - 1.0) / d.var
    return g_mean, g_var, -g_mean


def kl_divergence(q: DiagGaussian, p: DiagGaussian) -> np.ndarray:
    """KL(q || p) for diagonal Gaussians, summed over the event dimension."""
    _check(q.mean, p.mean, "kl_divergence")
    diff = q.mean - p.mean
    return 0.5 * np.sum(np.log(p.var / q.var) + (q.var + diff * diff) / p.var - 1.0, axis=-1)


def kl_grads(q: DiagGaussian, p: DiagGaussian):
    """Partial derivatives of :func:`kl_divergence` w.r.t.
    (q.mean, q.var, p.mean, p.var), elementwise."""
    diff = q.mean - p.mean
    g_qm = diff / p.var
    g_qv = 0.5 * (1.0 / p.var - 1.0 / q.var)
    g_pv = 0.5 * (1.0 / p.var - (q.var + diff * diff) / (p.var * p.var))
    return g_qm, g_qv, -g_qm, g_pv


def reparameterize(d: DiagGaussian, noise) -> np.ndarray:
    """``mean + sqrt(var) * noise``; noise is standard normal from the caller."""
    noise = np.asarray(noise)
    _check(d.mean, noise, "reparameterize")
    return d.mean + np.sqrt(d.var) * noise


def reparameterize_grads(d: DiagGaussian, noise):
    """d sample / d mean and d sample / d var, elementwise."""
    return np.ones_like(d.mean), 0.5 * np.asarray(noise) / np.sqrt(d.var)
