"""Random-model sweeps: generate, train, evaluate, and summarize.

Seeding rule. Model ``i`` of a sweep with ``base_seed`` uses

    data seed  = stream_seed(base_seed, i, 0)
    train seed = stream_seed(base_seed, i, 1)

where ``stream_seed`` draws 63 bits from ``SeedSequence(base_seed,
spawn_key=(i, stream))``. The same ``i`` therefore gives the same generating
functions in every grid cell, and the training stream is independent of the
data stream. Rows depend only on (config, i), so serial and parallel runs
produce identical files.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import SweepConfig, render
from .dataset import CausalDataset
from .estimate import EvalReport, NaiveConfig, evaluate_model, evaluate_predictions, naive_regression_baseline
from .synth import SynthSpec, generate, normalize_ate
from .train import TrainConfig, make_model, train

ROW_COLUMNS = ["model_index", *EvalReport.columns(), "outcome_scale"]
METRICS = ("eps_ate_pre", "eps_ate_post", "pehe_pre", "pehe_post", "fit_t0_r2", "fit_t1_r2")


def stream_seed(base_seed: int, index: int, stream: int) -> int:
    ss = np.random.SeedSequence(base_seed, spawn_key=(index, stream))
    hi, lo = ss.generate_state(2, np.uint32)
    return int((int(hi) << 32 | int(lo)) >> 1)


@dataclass
class RunTask:
    index: int
    dataset: CausalDataset
    train: TrainConfig
    include_naive: bool
    mc_draws: int


def _failed(method: str, ds: CausalDataset, latent_dim: int, exc: Exception) -> EvalReport:
    md = ds.meta
    nan = math.nan
    msg = f"failed: {type(exc).__name__}: {exc}".replace("\n", " ").replace(",", ";")
    return EvalReport(
        method, int(md.get("seed", 0)), str(md.get("setting", "")), float(md.get("alpha", nan)),
        float(md.get("beta", nan)), latent_dim, nan, nan, nan, nan, status=msg,
    )


def run_one(task: RunTask) -> list[dict]:
    """Train and evaluate one model (plus the naive baseline); failures become rows."""
    ds, cfg = task.dataset, task.train
    scale = float(ds.meta.get("outcome_scale", 1.0))
    rows = []
    try:
        m = make_model(ds, cfg)
        m, trace = train(m, ds, cfg)
        rep = evaluate_model(m, ds, task.mc_draws, seed=cfg.seed, best_epoch=trace.best_epoch)
    except (FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
        rep = _failed("intact_vae", ds, cfg.latent_dim, exc)
    rows.append({"model_index": task.index, **rep.row(), "outcome_scale": scale})
    if task.include_naive:
        ncfg = NaiveConfig(
            hidden=cfg.hidden, learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
            max_epochs=cfg.max_epochs, patience=cfg.patience, seed=cfg.seed, dtype=cfg.dtype,
        )
        try:
            rep = evaluate_predictions("naive_regression", naive_regression_baseline(ds, ncfg), ds)
        except (FloatingPointError, ValueError) as exc:
            rep = _failed("naive_regression", ds, 0, exc)
        rows.append({"model_index": task.index, **rep.row(), "outcome_scale": scale})
    return rows


def build_tasks(cfg: SweepConfig) -> list[RunTask]:
    tasks = []
    for setting in cfg.settings:
        for alpha in cfg.alphas:
            for beta in cfg.betas:
                cell = []
                for i in range(cfg.n_models):
                    spec = SynthSpec(
                        seed=stream_seed(cfg.base_seed, i, 0), setting=setting, outcome_kind=cfg.outcome_kind,
                        alpha=alpha, beta=beta, covariate_dim=cfg.covariate_dim, n_points=cfg.n_points,
                    )
                    cell.append(generate(spec))
                if cfg.normalize_ate:
                    cell, _ = normalize_ate(cell)
                for i, ds in enumerate(cell):
                    tcfg = dataclasses.replace(cfg.train, seed=stream_seed(cfg.base_seed, i, 1))
                    tasks.append(RunTask(i, ds, tcfg, cfg.include_naive, cfg.mc_draws))
    return tasks


def run_sweep(cfg: SweepConfig, tasks: list[RunTask] | None = None) -> list[dict]:
    """All rows, ordered by (setting, alpha, beta, model index, method)."""
    tasks = build_tasks(cfg) if tasks is None else tasks
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(run_one, tasks))
    else:
        results = [run_one(t) for t in tasks]
    return [row for rows in results for row in rows]


def _cell(v) -> str:
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)


def rows_to_csv(rows: list[dict], cfg: SweepConfig | None = None) -> str:
    buf = io.StringIO()
    if cfg is not None:
        buf.write(render(cfg, prefix="# "))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROW_COLUMNS)
    for r in rows:
        w.writerow([_cell(r[c]) for c in ROW_COLUMNS])
    return buf.getvalue()


def read_rows(text: str) -> list[dict]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    out = []
    for r in csv.DictReader(lines):
        d = dict(r)
        for k in ("model_index", "seed", "latent_dim", "best_epoch"):
            d[k] = int(d[k])
        for k in ("alpha", "beta", "outcome_scale", *METRICS, "fit_t0_slope", "fit_t0_intercept", "fit_t1_slope", "fit_t1_intercept"):
            d[k] = float(d[k])
        out.append(d)
    return out


SUMMARY_COLUMNS = ["method", "setting", "alpha", "beta", "metric", "n_ok", "n_failed", "mean", "median", "std", "se"]


def summarize(rows: list[dict]) -> list[dict]:
    """Mean, median, std and standard error per (method, setting, alpha, beta)
    cell and metric, over successful rows. Both std and SE are reported since
    either could be meant by an error bar."""
    keys = []
    for r in rows:
        k = (r["method"], r["setting"], r["alpha"], r["beta"])
        if k not in keys:
            keys.append(k)
    out = []
    for k in keys:
        cell = [r for r in rows if (r["method"], r["setting"], r["alpha"], r["beta"]) == k]
        ok = [r for r in cell if r["status"] == "ok"]
        for metric in METRICS:
            v = np.array([r[metric] for r in ok], dtype=float)
            v = v[np.isfinite(v)]
            n = v.size
            std = float(np.std(v, ddof=1)) if n > 1 else math.nan
            out.append({
                "method": k[0], "setting": k[1], "alpha": k[2], "beta": k[3], "metric": metric,
                "n_ok": n, "n_failed": len(cell) - len(ok),
                "mean": float(np.mean(v)) if n else math.nan,
                "median": float(np.median(v)) if n else math.nan,
                "std": std, "se": std / math.sqrt(n) if n > 1 else math.nan,
            })
    return out


def summary_to_csv(summary: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for r in summary:
        w.writerow([_cell(r[c]) for c in SUMMARY_COLUMNS])
    return buf.getvalue()


def summary_path(output) -> Path:
    p = Path(output)
    return p.with_name(p.stem + ".summary" + (p.suffix or ".csv"))


def write_sweep(cfg: SweepConfig, rows: list[dict], output=None) -> tuple[Path, Path]:
    out = Path(output or cfg.output)
    out.write_text(rows_to_csv(rows, cfg))
    sp = summary_path(out)
    sp.write_text(summary_to_csv(summarize(rows)))
    return out, sp


def ihdp_tasks(table, replications, base_seed: int, train_cfg: TrainConfig, mc_draws: int = 100) -> list[RunTask]:
    """One task per replication index; replication ``r`` uses the data and
    train streams of model index ``r`` under ``base_seed``."""
    from .ihdp import synthesize_ihdp

    tasks = []
    for r in replications:
        ds = synthesize_ihdp(table, stream_seed(base_seed, r, 0))
        tcfg = dataclasses.replace(train_cfg, seed=stream_seed(base_seed, r, 1))
        tasks.append(RunTask(r, ds, tcfg, False, mc_draws))
    return tasks


def run_ihdp(table, replications, base_seed: int, train_cfg: TrainConfig, mc_draws: int = 100, workers: int = 1) -> list[dict]:
    tasks = ihdp_tasks(table, replications, base_seed, train_cfg, mc_draws)
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, tasks))
    else:
        results = [run_one(t) for t in tasks]
    return [row for rows in results for row in rows]
