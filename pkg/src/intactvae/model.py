"""Intact-VAE: treatment-conditional decoder, covariate-conditional prior and
an encoder over all observables, trained on the evidence lower bound.

    decoder  y | z, t    ~ N(f(z, t), g(z, t))
    prior    z | x (, t) ~ N(h(x[, t]), k(x[, t]))
    encoder  z | x, y, t ~ N(r(x, y, t), s(x, y, t))

Every head is an :class:`~intactvae.nn.Mlp`; variance heads go through
``softplus + floor``. Gradients of the ELBO are assembled by hand from the
per-head vector-Jacobian products.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np

from .gaussian import (
    DiagGaussian,
    VARIANCE_FLOOR,
    kl_divergence,
    kl_grads,
    log_prob,
    log_prob_grads,
    positive_variance,
    positive_variance_grad,
)
from .nn import Mlp, dump_params, load_params, record_length


@dataclass
class VaeConfig:
    x_dim: int
    y_dim: int = 1
    latent_dim: int = 1
    hidden: tuple[int, ...] = (200, 200, 200)
    activation: str = "relu"
    balanced_prior: bool = True
    separate_decoder_heads: bool = False
    learn_decoder_noise: bool = True
    decoder_variance: float = 0.04
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.x_dim <= 0 or self.y_dim <= 0 or self.latent_dim <= 0:
            raise ValueError("dimensions must be positive")
        if self.decoder_variance <= 0:
            raise ValueError("decoder_variance must be positive")


@dataclass
class ElboTerms:
    reconstruction: float
    kl: float
    elbo: float
    grads: dict[str, list[np.ndarray]] | None = field(default=None, repr=False)


def _column(t) -> np.ndarray:
    t = np.asarray(t)
    if t.ndim == 0:
        t = t[None]
    return t.reshape(-1, 1)


class IntactVae:
    def __init__(self, config: VaeConfig):
        self.config = config
        c = config
        dtype = np.dtype(c.dtype)
        hid = list(c.hidden)
        seeds = np.random.SeedSequence(c.seed).generate_state(8)
        t_in = 0 if c.separate_decoder_heads else 1
        p_in = c.x_dim + (0 if c.balanced_prior else 1)
        e_in = c.x_dim + c.y_dim + 1

        def mk(n_in, n_out, k):
            return Mlp([n_in, *hid, n_out], c.activation, seed=int(seeds[k]), dtype=dtype)

        self.nets: dict[str, Mlp] = {}
        if c.separate_decoder_heads:
            self.nets["f0"] = mk(c.latent_dim, c.y_dim, 0)
            self.nets["f1"] = mk(c.latent_dim, c.y_dim, 1)
            if c.learn_decoder_noise:
                self.nets["g0"] = mk(c.latent_dim, c.y_dim, 2)
                self.nets["g1"] = mk(c.latent_dim, c.y_dim, 3)
        else:
            self.nets["f"] = mk(c.latent_dim + t_in, c.y_dim, 0)
            if c.learn_decoder_noise:
                self.nets["g"] = mk(c.latent_dim + t_in, c.y_dim, 2)
        self.nets["h"] = mk(p_in, c.latent_dim, 4)
        self.nets["k"] = mk(p_in, c.latent_dim, 5)
        self.nets["r"] = mk(e_in, c.latent_dim, 6)
        self.nets["s"] = mk(e_in, c.latent_dim, 7)
        # multiplies prior and encoder variances; changed only by apply_affine_equivalence
        self.latent_var_scale = np.ones(c.latent_dim, dtype=dtype)

    # -- bookkeeping -----------------------------------------------------------------

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.config.dtype)

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    def decoder_keys(self, t: int) -> tuple[str, str | None]:
        if self.config.separate_decoder_heads:
            return f"f{t}", (f"g{t}" if self.config.learn_decoder_noise else None)
        return "f", ("g" if self.config.learn_decoder_noise else None)

    def parameters(self) -> Iterator[np.ndarray]:
        for name in self.nets:
            yield from self.nets[name].params()

    def param_list(self) -> list[np.ndarray]:
        return list(self.parameters())

    def copy(self) -> "IntactVae":
        new = object.__new__(IntactVae)
        new.config = VaeConfig(**asdict(self.config))
        new.nets = {k: v.copy() for k, v in self.nets.items()}
        new.latent_var_scale = self.latent_var_scale.copy()
        return new

    def snapshot(self) -> list[np.ndarray]:
        return [p.copy() for p in self.parameters()]

    def restore(self, snap: list[np.ndarray]) -> None:
        for p, s in zip(self.parameters(), snap):
            p[...] = s

    def _arr(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=self.dtype)
        return a[:, None] if a.ndim == 1 else a

    def _t(self, t, n: int) -> np.ndarray:
        t = np.asarray(t)
        if t.ndim == 0:
            t = np.full(n, t)
        if t.shape != (n,):
            raise ValueError(f"treatment has shape {np.shape(t)}, expected ({n},)")
        if not np.all((t == 0) | (t == 1)):
            raise ValueError("treatment must be 0 or 1")
        return t.astype(self.dtype)

    def _x(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 1:
            x = x[None, :] if x.shape[0] == self.config.x_dim else x[:, None]
        if x.shape[1] != self.config.x_dim:
            raise ValueError(f"covariates have {x.shape[1]} columns, model expects {self.config.x_dim}")
        return x

    # -- distributions ---------------------------------------------------------------

    def _prior_input(self, x, t) -> np.ndarray:
        if self.config.balanced_prior:
            return x
        return np.hstack([x, _column(t).astype(self.dtype)])

    def _encoder_input(self, x, y, t) -> np.ndarray:
        return np.hstack([x, y, _column(t).astype(self.dtype)])

    def prior(self, x, t=None) -> DiagGaussian:
        """Conditional prior; ``t`` is ignored when the prior is balanced."""
        x = self._x(x)
        if self.config.balanced_prior:
            inp = x
        else:
            if t is None:
                raise ValueError("a treatment-dependent prior needs t")
            inp = self._prior_input(x, self._t(t, x.shape[0]))
        mean = self.nets["h"].forward(inp)
        var = positive_variance(self.nets["k"].forward(inp)) * self.latent_var_scale
        return DiagGaussian(mean, var)

    def encode(self, x, y, t) -> DiagGaussian:
        x = self._x(x)
        y = self._arr(y)
        if y.shape != (x.shape[0], self.config.y_dim):
            raise ValueError(f"outcome has shape {y.shape}, expected ({x.shape[0]}, {self.config.y_dim})")
        inp = self._encoder_input(x, y, self._t(t, x.shape[0]))
        mean = self.nets["r"].forward(inp)
        var = positive_variance(self.nets["s"].forward(inp)) * self.latent_var_scale
        return DiagGaussian(mean, var)

    def decode(self, z, t) -> DiagGaussian:
        z = self._arr(z)
        if z.shape[1] != self.latent_dim:
            raise ValueError(f"latent has {z.shape[1]} columns, model expects {self.latent_dim}")
        t = self._t(t, z.shape[0])
        mean, var, _ = self._decode_forward(z, t)
        return DiagGaussian(mean, var)

    def _decode_forward(self, z, t):
        """Decoder mean/variance for rows of ``z`` with per-row treatment ``t``."""
        n = z.shape[0]
        y_dim = self.config.y_dim
        mean = np.empty((n, y_dim), dtype=self.dtype)
        raw = np.zeros((n, y_dim), dtype=self.dtype)
        info = []
        if self.config.separate_decoder_heads:
            groups = [(tv, np.flatnonzero(t == tv)) for tv in (0, 1)]
            groups = [(tv, idx) for tv, idx in groups if idx.size]
            for tv, idx in groups:
                fk, gk = self.decoder_keys(tv)
                inp = z[idx]
                info.append(self._heads(fk, gk, inp, idx, mean, raw))
        else:
            inp = np.hstack([z, t[:, None]])
            info.append(self._heads("f", self.decoder_keys(0)[1], inp, slice(None), mean, raw))
        if self.config.learn_decoder_noise:
            var = positive_variance(raw)
        else:
            var = np.full((n, y_dim), self.config.decoder_variance, dtype=self.dtype)
        return mean, var, (info, raw)

    def _heads(self, fk, gk, inp, idx, mean, raw):
        m, ftape = self.nets[fk].forward(inp, return_tape=True)
        mean[idx] = m
        gtape = None
        if gk is not None:
            gr, gtape = self.nets[gk].forward(inp, return_tape=True)
            raw[idx] = gr
        return (fk, gk, idx, ftape, gtape)

    # -- objective -------------------------------------------------------------------

    def draw_noise(self, rng: np.random.Generator, n: int, mc_samples: int = 1) -> np.ndarray:
        return rng.standard_normal((mc_samples, n, self.latent_dim)).astype(self.dtype)

    def elbo(self, x, y, t, noise, *, with_grads: bool = True) -> ElboTerms:
        """Batch-mean ELBO. ``noise`` has shape ``(mc_samples, batch, latent_dim)``
        holding standard-normal draws for the reparameterized posterior samples."""
        c = self.config
        x = self._x(x)
        n = x.shape[0]
        y = self._arr(y)
        t = self._t(t, n)
        noise = np.asarray(noise, dtype=self.dtype)
        if noise.ndim == 2:
            noise = noise[None]
        if noise.shape[1:] != (n, self.latent_dim) or noise.shape[0] < 1:
            raise ValueError(f"noise has shape {noise.shape}, expected (S, {n}, {self.latent_dim})")
        S = noise.shape[0]

        enc_in = self._encoder_input(x, y, t)
        qm, r_tape = self.nets["r"].forward(enc_in, return_tape=True)
        s_raw, s_tape = self.nets["s"].forward(enc_in, return_tape=True)
        qv = positive_variance(s_raw) * self.latent_var_scale
        pr_in = self._prior_input(x, t)
        pm, h_tape = self.nets["h"].forward(pr_in, return_tape=True)
        k_raw, k_tape = self.nets["k"].forward(pr_in, return_tape=True)
        pv = positive_variance(k_raw) * self.latent_var_scale

        bad = ~np.all(np.isfinite(np.hstack([qm, qv, pm, pv])), axis=1)
        if np.any(bad):
            raise FloatingPointError(f"non-finite ELBO term at datum {int(np.flatnonzero(bad)[0])}")
        q = DiagGaussian(qm, qv)
        p = DiagGaussian(pm, pv)
        qsd = np.sqrt(qv)
        z = (qm[None] + qsd[None] * noise).reshape(S * n, self.latent_dim)
        t_rep = np.tile(t, S)
        y_rep = np.tile(y, (S, 1))
        dm, dv, (dinfo, g_raw) = self._decode_forward(z, t_rep)
        dec = DiagGaussian(dm, dv)
        rec_rows = log_prob(dec, y_rep).reshape(S, n).mean(axis=0)
        kl_rows = kl_divergence(q, p)
        bad = ~(np.isfinite(rec_rows) & np.isfinite(kl_rows))
        if np.any(bad):
            raise FloatingPointError(f"non-finite ELBO term at datum {int(np.flatnonzero(bad)[0])}")
        # float64 (a float subclass) unless the model runs in extended precision
        acc = np.result_type(rec_rows, np.float64)
        rec = np.mean(rec_rows, dtype=acc)
        kl = np.mean(kl_rows, dtype=acc)
        terms = ElboTerms(rec, kl, rec - kl)
        if not with_grads:
            return terms

        grads: dict[str, list[np.ndarray]] = {}
        w_rec = 1.0 / (S * n)
        g_dm, g_dv, _ = log_prob_grads(dec, y_rep)
        g_dm = g_dm * w_rec
        g_z = np.zeros_like(z)
        for fk, gk, idx, ftape, gtape in dinfo:
            pg, ig = self.nets[fk].backward(ftape, g_dm[idx])
            _accumulate(grads, fk, pg)
            g_z[idx] += ig[:, : self.latent_dim]
            if gk is not None:
                cot = g_dv[idx] * w_rec * positive_variance_grad(g_raw[idx])
                pg, ig = self.nets[gk].backward(gtape, cot)
                _accumulate(grads, gk, pg)
                g_z[idx] += ig[:, : self.latent_dim]
        g_z = g_z.reshape(S, n, self.latent_dim)
        g_qm = g_z.sum(axis=0)
        g_qv = (g_z * noise).sum(axis=0) * (0.5 / qsd)

        w_kl = 1.0 / n
        k_qm, k_qv, k_pm, k_pv = kl_grads(q, p)
        g_qm = g_qm - w_kl * k_qm
        g_qv = g_qv - w_kl * k_qv
        g_pm = -w_kl * k_pm
        g_pv = -w_kl * k_pv

        scale = self.latent_var_scale
        _accumulate(grads, "r", self.nets["r"].backward(r_tape, g_qm)[0])
        _accumulate(grads, "s", self.nets["s"].backward(s_tape, g_qv * scale * positive_variance_grad(s_raw))[0])
        _accumulate(grads, "h", self.nets["h"].backward(h_tape, g_pm)[0])
        _accumulate(grads, "k", self.nets["k"].backward(k_tape, g_pv * scale * positive_variance_grad(k_raw))[0])
        for name, net in self.nets.items():
            if name not in grads:
                grads[name] = [np.zeros_like(p) for p in net.params()]
        terms.grads = grads
        return terms

    def grad_list(self, grads: dict[str, list[np.ndarray]]) -> list[np.ndarray]:
        """Flatten a gradient dict into :meth:`parameters` order."""
        return [g for name in self.nets for g in grads[name]]

    # -- serialization ---------------------------------------------------------------

    def dumps(self) -> str:
        """Checkpoint text: config header, variance-scale line, then one
        parameter record per head in :attr:`nets` order."""
        cfg = asdict(self.config)
        cfg["hidden"] = list(cfg["hidden"])
        parts = [
            "intactvae-checkpoint 1\n",
            json.dumps(cfg, sort_keys=True) + "\n",
            " ".join(self.nets) + "\n",
            " ".join("%.17g" % v for v in self.latent_var_scale.astype(np.float64)) + "\n",
        ]
        parts.extend(dump_params(self.nets[name]) for name in self.nets)
        return "".join(parts)

    @classmethod
    def loads(cls, text: str) -> "IntactVae":
        lines = text.splitlines()
        if not lines or lines[0] != "intactvae-checkpoint 1":
            raise ValueError("not an Intact-VAE checkpoint")
        cfg = json.loads(lines[1])
        cfg["hidden"] = tuple(cfg["hidden"])
        model = cls(VaeConfig(**cfg))
        names = lines[2].split()
        if names != list(model.nets):
            raise ValueError(f"checkpoint heads {names} do not match configuration {list(model.nets)}")
        model.latent_var_scale = np.array([float(v) for v in lines[3].split()], dtype=model.dtype)
        pos = 4
        for name in names:
            n_lines = record_length(model.nets[name])
            model.nets[name] = load_params(lines[pos : pos + n_lines], dtype=model.dtype)
            pos += n_lines
        return model


def _accumulate(grads: dict, name: str, pg: list[np.ndarray]) -> None:
    if name in grads:
        for acc, g in zip(grads[name], pg):
            acc += g
    else:
        grads[name] = [g.copy() for g in pg]


def apply_affine_equivalence(m: IntactVae, scale, shift) -> IntactVae:
    """Reparameterize the latent as ``z' = scale * z + shift``.

    Prior and encoder means are pushed forward through the output layer of
    their mean heads, their variances through :attr:`IntactVae.latent_var_scale`,
    and the inverse map is folded into the first layer of every decoder head.
    The observational model is unchanged.
    """
    scale = np.asarray(scale, dtype=np.float64).reshape(-1)
    shift = np.asarray(shift, dtype=np.float64).reshape(-1)
    n = m.latent_dim
    if scale.size == 1 and n > 1:
        scale = np.full(n, scale[0])
    if shift.size == 1 and n > 1:
        shift = np.full(n, shift[0])
    if scale.shape != (n,) or shift.shape != (n,):
        raise ValueError(f"scale and shift must have {n} entries")
    if np.any(scale == 0):
        raise ValueError("scale entries must be nonzero")

    new = m.copy()
    for name in ("h", "r"):
        net = new.nets[name]
        net.weights[-1] = (net.weights[-1] * scale).astype(net.dtype)
        net.biases[-1] = (net.biases[-1] * scale + shift).astype(net.dtype)
    new.latent_var_scale = (m.latent_var_scale * scale * scale).astype(m.dtype)
    for name, net in new.nets.items():
        if name[0] not in "fg":
            continue
        if net.positive_weights:
            raise ValueError("cannot fold an affine map into a positive-weight network")
        w = net.weights[0]
        wz = w[:n] / scale[:, None]
        net.biases[0] = (net.biases[0] - (shift / scale) @ w[:n]).astype(net.dtype)
        net.weights[0] = np.vstack([wz, w[n:]]).astype(net.dtype)
    return new
