"""Command-line entry point: ``intactvae <command> [flags]``.

Failures print one line ``error<TAB><kind><TAB><message>`` on stderr and exit
with status 1; usage errors exit with status 2.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from pathlib import Path

from . import config as config_mod
from .dataset import load, save
from .estimate import EvalReport, evaluate_model
from .ihdp import DATA_DIR_ENV, load_covariates, standin_table
from .model import IntactVae
from .oracles import run_selftest
from .sweep import rows_to_csv, run_ihdp, run_sweep, summarize, summary_path, summary_to_csv, write_sweep
from .synth import OUTCOME_KINDS, SETTINGS, SynthSpec, generate
from .train import make_model, train


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


def resolve_data_path(path: str) -> Path:
    """Existing paths are used as given; otherwise a relative path is looked
    up under the directory named by the data-directory environment variable."""
    p = Path(path)
    if p.exists() or p.is_absolute() or DATA_DIR_ENV not in os.environ:
        return p
    return Path(os.environ[DATA_DIR_ENV]) / p


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training (override the config file)")
    g.add_argument("--learning-rate", type=float)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--max-epochs", type=int)
    g.add_argument("--patience", type=float)
    g.add_argument("--min-epochs", type=int)
    g.add_argument("--latent-dim", type=int)
    g.add_argument("--hidden", type=lambda s: tuple(int(v) for v in s.split(",")))
    g.add_argument("--unbalanced-prior", action="store_true", help="let the prior depend on t")
    g.add_argument("--separate-heads", action="store_true", help="one decoder network per treatment arm")
    g.add_argument("--fixed-noise", action="store_true", help="do not learn the decoder variance")
    g.add_argument("--mc-samples", type=int)
    g.add_argument("--dtype", choices=("float32", "float64"))


def _train_overrides(a) -> dict:
    return {
        "learning_rate": a.learning_rate, "batch_size": a.batch_size, "max_epochs": a.max_epochs,
        "patience": a.patience, "min_epochs": a.min_epochs, "latent_dim": a.latent_dim, "hidden": a.hidden,
        "balanced_prior": False if a.unbalanced_prior else None,
        "separate_decoder_heads": True if a.separate_heads else None,
        "learn_decoder_noise": False if a.fixed_noise else None,
        "mc_samples": a.mc_samples, "dtype": a.dtype,
    }


def _base_config(path) -> config_mod.SweepConfig:
    return config_mod.load_config(path) if path else config_mod.SweepConfig()


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="intactvae", description="Intact-VAE treatment-effect estimation")
    sub = ap.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("gen", help="write a synthetic dataset")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--setting", choices=SETTINGS, default="proxy_confounded")
    p.add_argument("--outcome-kind", choices=OUTCOME_KINDS, default="nonlinear_invertible")
    p.add_argument("--alpha", type=float, default=0.2)
    p.add_argument("--beta", type=float, default=0.2)
    p.add_argument("--n-points", type=int, default=1500)
    p.add_argument("--covariate-dim", type=int, default=3)
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("train", help="train on a dataset file; write checkpoint and trace")
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", help="INI file; its [train] section is used")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--trace", help="per-epoch ELBO CSV")
    _add_train_flags(p)

    p = sub.add_parser("eval", help="checkpoint + dataset -> one EvalReport row")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, required=True, help="seeds the Monte-Carlo latent draws")
    p.add_argument("--mc-draws", type=int, default=100)
    p.add_argument("-o", "--output", help="CSV path (default stdout)")

    p = sub.add_parser("sweep", help="random-model sweep from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, help="overrides base_seed")
    p.add_argument("--n-models", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("-o", "--output")
    _add_train_flags(p)

    p = sub.add_parser("ihdp", help="IHDP-style replications over a covariate file")
    p.add_argument("--covariates", default="auto", help="file path, 'auto' (data directory) or 'standin'")
    p.add_argument("--format", choices=("table", "cevae"))
    p.add_argument("--reps", default="0:10", help="replication range start:stop")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", help="INI file; its [train] section is used")
    p.add_argument("--mc-draws", type=int, default=100)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-o", "--output", required=True)
    _add_train_flags(p)

    p = sub.add_parser("selftest", help="gradient, KL and ELBO oracle suite")
    p.add_argument("--seed", type=int, default=0)
    return ap


def cmd_gen(a) -> int:
    spec = SynthSpec(
        seed=a.seed, setting=a.setting, outcome_kind=a.outcome_kind, alpha=a.alpha, beta=a.beta,
        covariate_dim=a.covariate_dim, n_points=a.n_points,
    )
    save(generate(spec), a.output)
    return 0


def _trace_csv(trace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_elbo", "valid_elbo"])
    for i, tr in enumerate(trace.train_elbo):
        va = trace.valid_elbo[i] if i < len(trace.valid_elbo) else float("nan")
        w.writerow([i + 1, "%.17g" % tr, "%.17g" % va])
    w.writerow(["best", trace.best_epoch, "%.17g" % trace.best_valid_elbo])
    return buf.getvalue()


def cmd_train(a) -> int:
    ds = load(resolve_data_path(a.data))
    base = _base_config(a.config)
    cfg = config_mod.with_overrides(base, train={**_train_overrides(a), "seed": a.seed}).train
    m, trace = train(make_model(ds, cfg), ds, cfg)
    Path(a.checkpoint).write_text(m.dumps())
    if a.trace:
        Path(a.trace).write_text(_trace_csv(trace))
    return 0


def cmd_eval(a) -> int:
    m = IntactVae.loads(Path(a.checkpoint).read_text())
    ds = load(resolve_data_path(a.data))
    rep = evaluate_model(m, ds, a.mc_draws, seed=a.seed)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = EvalReport.columns()
    w.writerow(cols)
    row = rep.row()
    w.writerow(["%.17g" % row[c] if isinstance(row[c], float) else row[c] for c in cols])
    if a.output:
        Path(a.output).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return 0


def cmd_sweep(a) -> int:
    cfg = config_mod.with_overrides(
        config_mod.load_config(a.config),
        sweep={"base_seed": a.seed, "n_models": a.n_models, "workers": a.workers, "output": a.output},
        train=_train_overrides(a),
    )
    rows = run_sweep(cfg)
    out, sp = write_sweep(cfg, rows)
    n_failed = sum(r["status"] != "ok" for r in rows)
    print(f"wrote {len(rows)} rows to {out} and summary to {sp}; failed rows: {n_failed}")
    return 0


def _parse_reps(text: str) -> range:
    try:
        lo, hi = (int(v) for v in text.split(":"))
    except ValueError:
        raise CliError("usage", f"--reps must be start:stop, got {text!r}") from None
    if hi <= lo or lo < 0:
        raise CliError("usage", f"empty replication range {text!r}")
    return range(lo, hi)


def cmd_ihdp(a) -> int:
    if a.covariates == "standin":
        table = standin_table()
    elif a.covariates == "auto":
        table = load_covariates(None, a.format)
    else:
        table = load_covariates(resolve_data_path(a.covariates), a.format)
    base = _base_config(a.config)
    overrides = _train_overrides(a)
    if a.config is None and a.latent_dim is None:
        overrides["latent_dim"] = 10
    cfg = config_mod.with_overrides(base, sweep={"base_seed": a.seed}, train=overrides)
    rows = run_ihdp(table, _parse_reps(a.reps), a.seed, cfg.train, a.mc_draws, a.workers)
    header = config_mod.render(cfg, prefix="# ")
    out = Path(a.output)
    out.write_text(header + rows_to_csv(rows))
    summary_path(out).write_text(summary_to_csv(summarize(rows)))
    print(f"wrote {len(rows)} rows to {out}")
    return 0


def cmd_selftest(a) -> int:
    results = run_selftest(a.seed)
    for r in results:
        print(r.line())
    n_fail = sum(not r.passed for r in results)
    print(f"{len(results) - n_fail}/{len(results)} checks passed")
    return 0 if n_fail == 0 else 1


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "ihdp": cmd_ihdp, "selftest": cmd_selftest}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        kind, msg = exc.kind, str(exc)
    except FileNotFoundError as exc:
        kind, msg = "not_found", str(exc)
    except FloatingPointError as exc:
        kind, msg = "numerical", str(exc)
    except (ValueError, KeyError, OSError) as exc:
        kind, msg = "invalid_input", str(exc)
    print(f"error\t{kind}\t{msg}".replace("\n", " "), file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
