"""Causal datasets with full ground truth, and their delimited-text format.

File layout (comma separated, one header line)::

    x1..xm,t,y,y0,y1,z1..zk,prop,split,mu0,mu1

``y0``/``y1`` are the sampled potential outcomes, ``mu0``/``mu1`` their
noiseless means given the true latent (used as the effect ground truth).
``split`` is one of ``train``, ``valid``, ``test``. Reals are written with 17
significant digits so a write/read round trip is bit-exact; unknown
propensities are written as ``nan``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPLIT_NAMES = ("train", "valid", "test")


@dataclass
class CausalDataset:
    x: np.ndarray
    t: np.ndarray
    y: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    mu0: np.ndarray
    mu1: np.ndarray
    z_true: np.ndarray
    propensity: np.ndarray
    split: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        n = self.x.shape[0]
        self.t = np.asarray(self.t).astype(np.int64)
        for name in ("y", "y0", "y1", "mu0", "mu1", "propensity"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(n))
        z = np.asarray(self.z_true, dtype=float)
        self.z_true = z.reshape(n, -1) if z.size else np.zeros((n, 0))
        self.split = np.asarray(self.split).astype(np.int64)
        if self.t.shape != (n,) or self.split.shape != (n,):
            raise ValueError("t and split must have one entry per row")

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def x_dim(self) -> int:
        return self.x.shape[1]

    def indices(self, *names: str) -> np.ndarray:
        codes = [SPLIT_NAMES.index(n) for n in names]
        return np.flatnonzero(np.isin(self.split, codes))

    def check_consistency(self) -> bool:
        """Factual outcome equals the potential outcome of the received arm."""
        return bool(np.array_equal(self.y, np.where(self.t == 1, self.y1, self.y0)))

    def true_effects(self, idx=None) -> np.ndarray:
        idx = slice(None) if idx is None else idx
        return self.mu1[idx] - self.mu0[idx]

    def scaled(self, factor: float) -> "CausalDataset":
        """Copy with every outcome quantity divided by ``factor``."""
        f = float(factor)
        return CausalDataset(
            self.x.copy(), self.t.copy(), self.y / f, self.y0 / f, self.y1 / f,
            self.mu0 / f, self.mu1 / f, self.z_true.copy(), self.propensity.copy(),
            self.split.copy(), dict(self.meta, outcome_scale=f),
        )


def _fmt(v: float) -> str:
    return "%.17g" % v


def to_csv(ds: CausalDataset) -> str:
    m, k = ds.x_dim, ds.z_true.shape[1]
    header = [f"x{i + 1}" for i in range(m)] + ["t", "y", "y0", "y1"]
    header += [f"z{i + 1}" for i in range(k)] + ["prop", "split", "mu0", "mu1"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for i in range(len(ds)):
        row = [_fmt(v) for v in ds.x[i]] + [str(int(ds.t[i])), _fmt(ds.y[i]), _fmt(ds.y0[i]), _fmt(ds.y1[i])]
        row += [_fmt(v) for v in ds.z_true[i]]
        row += [_fmt(ds.propensity[i]), SPLIT_NAMES[ds.split[i]], _fmt(ds.mu0[i]), _fmt(ds.mu1[i])]
        w.writerow(row)
    return buf.getvalue()


def from_csv(text: str) -> CausalDataset:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError("empty dataset file")
    header, body = rows[0], rows[1:]
    col = {name: j for j, name in enumerate(header)}
    for required in ("t", "y", "y0", "y1", "prop", "split", "mu0", "mu1"):
        if required not in col:
            raise ValueError(f"dataset header lacks column {required!r}")
    xs = [j for j, name in enumerate(header) if name.startswith("x")]
    zs = [j for j, name in enumerate(header) if name.startswith("z")]
    n = len(body)
    data = np.empty((n, len(header)))
    split = np.empty(n, dtype=np.int64)
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise ValueError(f"line {i}: expected {len(header)} fields, got {len(row)}")
        for j, cell in enumerate(row):
            if j == col["split"]:
                if cell not in SPLIT_NAMES:
                    raise ValueError(f"line {i}: unknown split {cell!r}")
                split[i - 2] = SPLIT_NAMES.index(cell)
                data[i - 2, j] = np.nan
                continue
            try:
                data[i - 2, j] = float(cell)
            except ValueError:
                raise ValueError(f"line {i}, column {header[j]!r}: not a number: {cell!r}") from None
    return CausalDataset(
        x=data[:, xs], t=data[:, col["t"]], y=data[:, col["y"]],
        y0=data[:, col["y0"]], y1=data[:, col["y1"]],
        mu0=data[:, col["mu0"]], mu1=data[:, col["mu1"]],
        z_true=data[:, zs], propensity=data[:, col["prop"]], split=split,
    )


def save(ds: CausalDataset, path) -> None:
    Path(path).write_text(to_csv(ds))


def load(path) -> CausalDataset:
    return from_csv(Path(path).read_text())


def three_way_split(n: int, rng: np.random.Generator, fractions=(1 / 3, 1 / 3, 1 / 3)) -> np.ndarray:
    """Random assignment of ``n`` rows to train/valid/test with the given
    fractions; counts are rounded, the remainder goes to the test set."""
    n_train = int(round(fractions[0] * n))
    n_valid = int(round(fractions[1] * n))
    codes = np.full(n, 2, dtype=np.int64)
    perm = rng.permutation(n)
    codes[perm[:n_train]] = 0
    codes[perm[n_train : n_train + n_valid]] = 1
    return codes
