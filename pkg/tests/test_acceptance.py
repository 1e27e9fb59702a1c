"""End-to-end acceptance checks. Each test prints one line

    PASS|FAIL|SKIP <criterion> <measured values> <pinned thresholds>

to the terminal (capture is bypassed), then asserts. The sweeps train about
50 models on one core and take about 15 minutes.
"""

import dataclasses
import math
import time

import numpy as np
import pytest

from intactvae.cli import main
from intactvae.config import SweepConfig
from intactvae.estimate import ate_error, pehe, predict_outcomes_post, predict_outcomes_pre
from intactvae.ihdp import DatasetNotInstalled, load_covariates
from intactvae.model import IntactVae, VaeConfig, apply_affine_equivalence
from intactvae.oracles import jitter_parameters, run_selftest
from intactvae.sweep import build_tasks, run_ihdp, run_sweep
from intactvae.synth import SynthSpec, generate
from intactvae.train import TrainConfig

pytestmark = pytest.mark.slow

# pinned tolerances
SELFTEST_SECONDS = 60.0
AFFINE_TOL = 1e-10
AFFINE_PAIRS = 20
OFFSET_TOL = 1e-12
SIGN_TEST_ALPHA = 0.05
PARITY_GAP = 0.5
R2_MEDIAN = 0.8
SLOPE_AGREEMENT = 0.2
SLOPE_MIN_MODELS = 7
RECOVERY_MODELS = 10
IHDP_REPS = 50
IHDP_ATE = 0.5
IHDP_SECONDS_PER_REP = 120.0

SWEEP = SweepConfig(
    n_models=20, settings=("proxy_confounded", "ignorable"), outcome_kind="nonlinear_invertible",
    alphas=(0.2,), betas=(0.2,), base_seed=0, n_points=1500, include_naive=True,
)


def report(capsys, name, passed, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if passed else 'FAIL'} {name} {detail}")


def sign_test_p(wins: int, losses: int) -> float:
    """Two-sided exact binomial sign test, ties dropped."""
    n = wins + losses
    if n == 0:
        return 1.0
    k = max(wins, losses)
    tail = sum(math.comb(n, i) for i in range(k, n + 1)) / 2**n
    return min(1.0, 2 * tail)


def rel_gap(a, b):
    return abs(a - b) / max(abs(a), abs(b))


@pytest.fixture(scope="module")
def sweep_rows():
    t0 = time.perf_counter()
    rows = run_sweep(SWEEP)
    return rows, time.perf_counter() - t0


@pytest.fixture(scope="module")
def unbalanced_rows():
    cfg = dataclasses.replace(
        SWEEP, n_models=RECOVERY_MODELS, settings=("proxy_confounded",), include_naive=False,
        train=dataclasses.replace(SWEEP.train, balanced_prior=False),
    )
    return run_sweep(cfg)


def select(rows, method, setting):
    sel = [r for r in rows if r["method"] == method and r["setting"] == setting]
    return sorted(sel, key=lambda r: r["model_index"])


def test_criterion_1_oracle_suite(capsys):
    t0 = time.perf_counter()
    results = run_selftest(0)
    dt = time.perf_counter() - t0
    failed = [r.name for r in results if not r.passed]
    ok = not failed and dt < SELFTEST_SECONDS
    report(capsys, "criterion-1-oracle-suite", ok,
           f"checks={len(results)} failed={failed or 'none'} seconds={dt:.1f} limit={SELFTEST_SECONDS:.0f}")
    assert ok


def test_criterion_2_affine_equivalence(capsys):
    ds = generate(SynthSpec(seed=0, n_points=300))
    m = IntactVae(VaeConfig(x_dim=3, seed=1))
    jitter_parameters(m, np.random.default_rng(0))
    rng = np.random.default_rng(2)
    base_post = predict_outcomes_post(m, ds.x, ds.y, ds.t, 50, seed=3)
    base_pre = predict_outcomes_pre(m, ds.x, 50, seed=3)
    worst = 0.0
    for _ in range(AFFINE_PAIRS):
        scale = rng.uniform(0.1, 10.0) * rng.choice([-1.0, 1.0])
        shift = rng.uniform(-5.0, 5.0)
        m2 = apply_affine_equivalence(m, scale, shift)
        post = predict_outcomes_post(m2, ds.x, ds.y, ds.t, 50, seed=3)
        pre = predict_outcomes_pre(m2, ds.x, 50, seed=3)
        for a, b in zip((*base_post, *base_pre), (*post, *pre)):
            worst = max(worst, float(np.max(np.abs(a - b))))
    ok = worst <= AFFINE_TOL
    report(capsys, "criterion-2-affine-equivalence", ok, f"pairs={AFFINE_PAIRS} max_abs_change={worst:.3g} tol={AFFINE_TOL:g}")
    assert ok


def test_criterion_3_metric_identities(capsys):
    tasks = build_tasks(SWEEP)
    worst_oracle, worst_offset = 0.0, 0.0
    for task in tasks:
        ds = task.dataset
        for idx in (ds.indices("test"), ds.indices("train", "valid")):
            worst_oracle = max(worst_oracle, ate_error((ds.mu0[idx], ds.mu1[idx]), ds, idx), pehe((ds.mu0[idx], ds.mu1[idx]), ds, idx))
            for delta in (-0.7, 0.25, 2.0):
                pred = (ds.mu0[idx], ds.mu1[idx] + delta)
                worst_offset = max(worst_offset, abs(ate_error(pred, ds, idx) - abs(delta)), abs(pehe(pred, ds, idx) - abs(delta)))
    ok = worst_oracle == 0.0 and worst_offset <= OFFSET_TOL
    report(capsys, "criterion-3-metric-identities", ok,
           f"datasets={len(tasks)} oracle_max={worst_oracle:g} (exact 0) offset_max_dev={worst_offset:.3g} tol={OFFSET_TOL:g}")
    assert ok


def test_criterion_4_confounded_sweep_beats_naive(capsys, sweep_rows):
    rows, seconds = sweep_rows
    vae = select(rows, "intact_vae", "proxy_confounded")
    naive = select(rows, "naive_regression", "proxy_confounded")
    pairs = [(v["pehe_pre"], n["pehe_pre"]) for v, n in zip(vae, naive) if v["status"] == n["status"] == "ok"]
    wins = sum(a < b for a, b in pairs)
    losses = sum(a > b for a, b in pairs)
    med_v = float(np.median([a for a, _ in pairs]))
    med_n = float(np.median([b for _, b in pairs]))
    p = sign_test_p(wins, losses)
    ok = len(pairs) == SWEEP.n_models and med_v < med_n and wins > losses and p < SIGN_TEST_ALPHA
    report(capsys, "criterion-4-confounded-vs-naive", ok,
           f"median_vae={med_v:.4f} median_naive={med_n:.4f} wins={wins} losses={losses} ties={len(pairs) - wins - losses} "
           f"sign_p={p:.3g} alpha={SIGN_TEST_ALPHA} models_ok={len(pairs)}/{SWEEP.n_models} sweep_seconds={seconds:.0f}")
    assert ok


def test_criterion_5_deconfounding_parity(capsys, sweep_rows):
    rows, _ = sweep_rows
    conf = [r["pehe_pre"] for r in select(rows, "intact_vae", "proxy_confounded") if r["status"] == "ok"]
    ign = [r["pehe_pre"] for r in select(rows, "intact_vae", "ignorable") if r["status"] == "ok"]
    mc, mi = float(np.median(conf)), float(np.median(ign))
    gap = abs(mc - mi) / mi
    ok = gap <= PARITY_GAP and len(conf) == len(ign) == SWEEP.n_models
    report(capsys, "criterion-5-deconfounding-parity", ok,
           f"median_confounded={mc:.4f} median_ignorable={mi:.4f} relative_gap={gap:.3f} limit={PARITY_GAP}")
    assert ok


def test_criterion_6_latent_recovery(capsys, sweep_rows, unbalanced_rows):
    rows, _ = sweep_rows
    bal = select(rows, "intact_vae", "proxy_confounded")[:RECOVERY_MODELS]
    r2 = [v for r in bal for v in (r["fit_t0_r2"], r["fit_t1_r2"])]
    med_r2 = float(np.median(r2))
    agree = sum(rel_gap(r["fit_t0_slope"], r["fit_t1_slope"]) <= SLOPE_AGREEMENT for r in bal)
    unb = select(unbalanced_rows, "intact_vae", "proxy_confounded")
    agree_unb = sum(rel_gap(r["fit_t0_slope"], r["fit_t1_slope"]) <= SLOPE_AGREEMENT for r in unb)
    ok = med_r2 >= R2_MEDIAN and agree >= SLOPE_MIN_MODELS
    report(capsys, "criterion-6-latent-recovery", ok,
           f"median_r2={med_r2:.3f} min={R2_MEDIAN} slope_agreement={agree}/{len(bal)} min={SLOPE_MIN_MODELS} "
           f"(t-dependent prior, reported only: {agree_unb}/{len(unb)})")
    assert ok


def test_criterion_7_ihdp(capsys):
    try:
        table = load_covariates()
    except DatasetNotInstalled as exc:
        with capsys.disabled():
            print(f"\nSKIP criterion-7-ihdp {exc}")
        pytest.skip(str(exc))
    cfg = TrainConfig(latent_dim=10, dtype="float32")
    t0 = time.perf_counter()
    rows = run_ihdp(table, range(IHDP_REPS), 0, cfg)
    per_rep = (time.perf_counter() - t0) / IHDP_REPS
    errs = [r["eps_ate_pre"] for r in rows if r["status"] == "ok"]
    mean = float(np.mean(errs)) if errs else math.inf
    ok = len(errs) == IHDP_REPS and mean <= IHDP_ATE and per_rep <= IHDP_SECONDS_PER_REP
    report(capsys, "criterion-7-ihdp", ok,
           f"reps_ok={len(errs)}/{IHDP_REPS} mean_eps_ate_pre={mean:.4f} limit={IHDP_ATE} "
           f"seconds_per_rep={per_rep:.1f} limit={IHDP_SECONDS_PER_REP:.0f}")
    assert ok


def test_criterion_8_cli_determinism(capsys, tmp_path):
    conf = tmp_path / "sweep.ini"
    conf.write_text("[sweep]\nn_models = 1\nn_points = 150\nmc_draws = 8\n[train]\nhidden = 16,16\nmax_epochs = 3\nmin_epochs = 0\n")
    train_flags = ["--hidden", "16,16", "--max-epochs", "3", "--min-epochs", "0"]

    def run_all(k):
        d = tmp_path / f"run{k}"
        d.mkdir()
        cmds = [
            ["gen", "--seed", "4", "--n-points", "150", "-o", str(d / "data.csv")],
            ["train", "--data", str(d / "data.csv"), "--seed", "5", "--checkpoint", str(d / "model.txt"),
             "--trace", str(d / "trace.csv"), *train_flags],
            ["eval", "--checkpoint", str(d / "model.txt"), "--data", str(d / "data.csv"), "--seed", "6", "-o", str(d / "eval.csv")],
            ["sweep", "--config", str(conf), "--seed", "7", "-o", str(d / "sweep.csv")],
            ["ihdp", "--covariates", "standin", "--reps", "0:2", "--seed", "8", "-o", str(d / "ihdp.csv"), *train_flags],
        ]
        statuses = [main(c) for c in cmds]
        capsys.readouterr()
        statuses.append(main(["selftest"]))
        (d / "selftest.txt").write_text(capsys.readouterr().out)
        files = sorted(p.name for p in d.iterdir())
        blobs = {name: (d / name).read_bytes().replace(str(d).encode(), b"RUN") for name in files}
        return statuses, blobs

    s1, b1 = run_all(1)
    s2, b2 = run_all(2)
    differing = sorted(k for k in b1 if b1[k] != b2.get(k))
    ok = s1 == s2 == [0] * 6 and b1.keys() == b2.keys() and not differing
    report(capsys, "criterion-8-cli-determinism", ok,
           f"commands=6 files={len(b1)} exit={s1} differing={differing or 'none'}")
    assert ok
