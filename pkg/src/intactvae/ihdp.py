"""IHDP-style semi-synthetic outcomes over an external covariate table.

Response surface, per replication::

    y(0) ~ N(exp(a . (x + b)), 1),   b = 0.5 in every entry
    y(1) ~ N(a . x - o, 1)

with the entries of ``a`` drawn from {0, .1, .2, .3, .4} with probabilities
(.6, .1, .1, .1, .1) and ``o`` chosen so the treated-group mean CATE is 4.
The split is 63/27/10 for train/valid/test.

Two input formats are read:

``cevae``
    comma separated, no header, columns ``t, y_factual, y_cfactual, mu0,
    mu1, x1..x25`` (the layout of the widely circulated replication files).
    Only ``t`` and the covariates are used.
``table``
    comma separated with a header line; covariate columns named ``x1..xK``
    and an optional ``t`` column. Other columns are ignored.

The real covariate file is not shipped. Place it in the directory named by
``INTACTVAE_DATA_DIR`` (default ``./data``) as ``ihdp_npci_1.csv`` or
``ihdp_covariates.csv``. A 30-row synthetic stand-in ships with the package
for tests.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .dataset import CausalDataset, three_way_split

DATA_DIR_ENV = "INTACTVAE_DATA_DIR"
KNOWN_FILES = ("ihdp_npci_1.csv", "ihdp_covariates.csv")
N_COVARIATES = 25
COEF_VALUES = np.array([0.0, 0.1, 0.2, 0.3, 0.4])
COEF_PROBS = np.array([0.6, 0.1, 0.1, 0.1, 0.1])
OFFSET_BIAS = 0.5
TREATED_CATE = 4.0
SPLIT_FRACTIONS = (0.63, 0.27, 0.10)


class DatasetNotInstalled(FileNotFoundError):
    """The covariate file is absent; dependent tests skip rather than fail."""


@dataclass
class CovariateTable:
    x: np.ndarray
    t: np.ndarray | None = None
    binary_columns: tuple[int, ...] = ()

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.x.ndim != 2:
            raise ValueError("covariates must be a 2-d table")
        if not np.all(np.isfinite(self.x)):
            raise ValueError("covariate table has missing or non-finite values")
        if self.t is not None:
            self.t = np.asarray(self.t).astype(np.int64)
            if self.t.shape != (self.x.shape[0],) or not np.all(np.isin(self.t, (0, 1))):
                raise ValueError("treatment column must be 0/1 with one entry per row")
        for j in self.binary_columns:
            if not np.all(np.isin(self.x[:, j], (0.0, 1.0))):
                raise ValueError(f"binary column x{j + 1} has values outside {{0, 1}}")

    def __len__(self) -> int:
        return self.x.shape[0]


def data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, "data"))


def find_covariate_file(directory=None) -> Path:
    d = Path(directory) if directory is not None else data_dir()
    for name in KNOWN_FILES:
        if (d / name).is_file():
            return d / name
    raise DatasetNotInstalled(f"dataset not installed: none of {', '.join(KNOWN_FILES)} in {d} (set {DATA_DIR_ENV})")


def _parse_float(cell: str, line: int, column: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise ValueError(f"line {line}, column {column}: not a number: {cell!r}") from None
    if not np.isfinite(v):
        raise ValueError(f"line {line}, column {column}: non-finite value {cell!r}")
    return v


def _binarize(x: np.ndarray) -> tuple[np.ndarray, tuple[int, ...]]:
    """Two-valued columns become 0/1; a {1, 2} coding is shifted down by one."""
    binary = []
    for j in range(x.shape[1]):
        vals = np.unique(x[:, j])
        if vals.size <= 2 and set(vals.tolist()) <= {0.0, 1.0}:
            binary.append(j)
        elif vals.size == 2 and set(vals.tolist()) == {1.0, 2.0}:
            x[:, j] -= 1.0
            binary.append(j)
    return x, tuple(binary)


def parse_covariates(text: str, fmt: str = "table") -> CovariateTable:
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if fmt == "cevae":
        if not rows:
            raise ValueError("empty covariate file")
        width = 5 + N_COVARIATES
        xs, ts = [], []
        for i, row in enumerate(rows, start=1):
            if len(row) != width:
                raise ValueError(f"line {i}: expected {width} fields, got {len(row)}")
            ts.append(_parse_float(row[0], i, "t"))
            xs.append([_parse_float(c, i, f"x{j + 1}") for j, c in enumerate(row[5:])])
        x, binary = _binarize(np.array(xs))
        return CovariateTable(x, np.array(ts), binary)
    if fmt != "table":
        raise ValueError(f"unknown covariate format {fmt!r}; use 'table' or 'cevae'")
    if len(rows) < 1:
        raise ValueError("empty covariate file")
    header = [h.strip() for h in rows[0]]
    xcols = sorted(
        (j for j, h in enumerate(header) if h.startswith("x") and h[1:].isdigit()),
        key=lambda j: int(header[j][1:]),
    )
    if not xcols:
        raise ValueError("header names no covariate columns x1..xK")
    tcol = header.index("t") if "t" in header else None
    xs, ts = [], []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ValueError(f"line {i}: expected {len(header)} fields, got {len(row)}")
        xs.append([_parse_float(row[j], i, header[j]) for j in xcols])
        if tcol is not None:
            ts.append(_parse_float(row[tcol], i, "t"))
    if not xs:
        raise ValueError("covariate file has a header but no rows")
    x, binary = _binarize(np.array(xs))
    return CovariateTable(x, np.array(ts) if tcol is not None else None, binary)


def load_covariates(path=None, fmt: str | None = None) -> CovariateTable:
    """Read a covariate table. ``path=None`` searches the data directory.
    ``fmt=None`` picks ``cevae`` for headerless numeric files, else ``table``."""
    p = find_covariate_file() if path is None else Path(path)
    if not p.is_file():
        raise DatasetNotInstalled(f"dataset not installed: {p} does not exist")
    text = p.read_text()
    if fmt is None:
        first = text.lstrip().split("\n", 1)[0].split(",")[0].strip()
        try:
            float(first)
            fmt = "cevae"
        except ValueError:
            fmt = "table"
    return parse_covariates(text, fmt)


def covariates_to_text(table: CovariateTable) -> str:
    """The ``table`` format, with 17 significant digits."""
    cols = [f"x{j + 1}" for j in range(table.x.shape[1])]
    if table.t is not None:
        cols.append("t")
    lines = [",".join(cols)]
    for i in range(len(table)):
        cells = ["%.17g" % v for v in table.x[i]]
        if table.t is not None:
            cells.append(str(int(table.t[i])))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def standin_table() -> CovariateTable:
    """The packaged 30-row synthetic stand-in (6 continuous, 19 binary columns)."""
    text = resources.files("intactvae").joinpath("data/ihdp_standin.csv").read_text()
    return parse_covariates(text, "table")


def make_standin_text(seed: int = 0, n: int = 30) -> str:
    """Regenerate the stand-in file contents."""
    rng = np.random.default_rng(seed)
    cont = rng.standard_normal((n, 6))
    binary = (rng.uniform(size=(n, 19)) < rng.uniform(0.1, 0.9, 19)).astype(float)
    logits = 0.8 * cont[:, 0] - 0.5 * binary[:, 0] - 1.0
    t = (rng.uniform(size=n) < 1 / (1 + np.exp(-logits))).astype(int)
    t[:2] = (0, 1)  # both groups present
    return covariates_to_text(CovariateTable(np.hstack([cont, binary]), t))


@dataclass(frozen=True)
class ResponseLaw:
    values: tuple[float, ...] = tuple(COEF_VALUES)
    probs: tuple[float, ...] = tuple(COEF_PROBS)
    bias: float = OFFSET_BIAS
    treated_cate: float = TREATED_CATE
    noise_sd: float = 1.0


def draw_coefficients(rng: np.random.Generator, dim: int, law: ResponseLaw = ResponseLaw()) -> np.ndarray:
    return rng.choice(np.asarray(law.values), size=dim, p=np.asarray(law.probs))


def response_means(x: np.ndarray, a: np.ndarray, o: float, bias: float = OFFSET_BIAS):
    """Noiseless (mu0, mu1) per unit."""
    return np.exp((x + bias) @ a), x @ a - o


def treated_offset(x: np.ndarray, t: np.ndarray, a: np.ndarray, law: ResponseLaw = ResponseLaw()) -> float:
    """o such that the mean of mu1 - mu0 over treated units equals the target."""
    treated = t == 1
    if not np.any(treated):
        raise ValueError("offset needs at least one treated unit")
    mu0, mu1_no_offset = response_means(x[treated], a, 0.0, law.bias)
    return float(np.mean(mu1_no_offset - mu0) - law.treated_cate)


def synthesize_ihdp(
    table: CovariateTable,
    seed: int,
    offset: float | None = None,
    law: ResponseLaw = ResponseLaw(),
    t: np.ndarray | None = None,
) -> CausalDataset:
    """One replication. ``offset=None`` selects o from the treated-CATE target.
    The treatment comes from ``t`` or else the table's own column."""
    t = table.t if t is None else np.asarray(t).astype(np.int64)
    if t is None:
        raise ValueError("no treatment assignment: table has no t column and none was passed")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    x = table.x
    a = draw_coefficients(rng, x.shape[1], law)
    o = treated_offset(x, t, a, law) if offset is None else float(offset)
    if not np.isfinite(o):
        raise ValueError("offset must be finite")
    mu0, mu1 = response_means(x, a, o, law.bias)
    n = len(table)
    y0 = mu0 + law.noise_sd * rng.standard_normal(n)
    y1 = mu1 + law.noise_sd * rng.standard_normal(n)
    y = np.where(t == 1, y1, y0)
    split = three_way_split(n, rng, SPLIT_FRACTIONS)
    meta = {"seed": seed, "setting": "ihdp", "offset": o, "coef": a.tolist(), "alpha": law.noise_sd**2, "beta": float("nan")}
    return CausalDataset(x, t, y, y0, y1, mu0, mu1, np.zeros((n, 0)), np.full(n, np.nan), split, meta)
