"""Acceptance criteria 1-9, each at its stated tolerance.

Every test carries a ``criterion`` marker; the terminal summary prints one
PASS/FAIL line per criterion number.
"""

import csv
import io
import itertools
import json
import math
import time

import numpy as np
import pytest
from scipy.optimize import minimize

from cdrlr.calibration import (
    ElubBounds,
    KdeCalibrator,
    clip_lr,
    elub_bounds,
    fit_pav,
    kde_density,
)
from cdrlr.cli import main
from cdrlr.corpus import LogCorpus
from cdrlr.evaluation import (
    SWEEP_DIMENSIONS,
    ExperimentConfig,
    cllr,
    cllr_min,
    compensated_days,
    export_report,
    run_experiment,
    sweep,
    sweep_grid,
)
from cdrlr.population_sim import SimConfig, simulate_population
from cdrlr.scoring import (
    DislocationCountScorer,
    dislocation_count,
    fit_logistic,
    logistic_gradient,
    logistic_objective,
    onedim_binning_features,
    onedim_edges,
    predict_proba,
)
from cdrlr.switching import extract_switches
from conftest import H7, make_pair

C1 = "switch extraction reproduces the four reference pairings"
C2 = "neutral Cllr is exactly 1 and near-perfect Cllr is below 1e-11"
C3 = "Cllr_min <= Cllr on 1000 sets; PAV equals the partition oracle for n <= 8"
C4 = "logistic gradient matches finite differences; toy fit matches a convex-optimizer oracle"
C5 = "KDE peak equals 1/(h sqrt(2 pi)); fitted class densities integrate to 1"
C6 = "ELUB neutral bounds [1,1], 1023 upper bound, every emitted LR within bounds"
C7 = "desk-scale 20 x 14 day experiment with 100 repeats: Cllr < 0.9 in under 5 minutes"
C8 = "six sweeps run end to end; dislocation, 1-D binning and rate compensation exact"
C9 = "every CLI command is byte-identical when repeated with the same seed"


def switch_rows(dist, dt):
    dist, dt = np.asarray(dist, float), np.asarray(dt, float)
    return np.column_stack([dist, dt, dist / dt, np.zeros(len(dist))])


# -- 1 -------------------------------------------------------------------------------------

@pytest.mark.criterion(1, C1)
def test_c1_reference_switches():
    p1 = [H7 + t for t in (100, 300, 400, 500, 700)]  # events a..e
    p2 = [H7 + t for t in (200, 600)]  # events a..b
    got = [(f"{1 if s.first.phone_id == 'p1' else 2}{'abcde'[s.first.index]}",
            f"{1 if s.second.phone_id == 'p1' else 2}{'abcde'[s.second.index]}")
           for s in extract_switches(make_pair(p1, p2))]
    assert got == [("1a", "2a"), ("2a", "1b"), ("1d", "2b"), ("2b", "1e")]


# -- 2 -------------------------------------------------------------------------------------

@pytest.mark.criterion(2, C2)
def test_c2_neutral_and_perfect():
    assert cllr(np.ones(100), np.ones(100)) == 1.0
    assert cllr(np.full(100, 1e12), np.full(100, 1e-12)) < 1e-11


# -- 3 -------------------------------------------------------------------------------------

@pytest.mark.criterion(3, C3)
def test_c3_cllr_min_below_cllr():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        su = 10 ** rng.normal(rng.normal(0.5, 1), rng.uniform(0.1, 3), rng.integers(1, 60))
        du = 10 ** rng.normal(rng.normal(-0.5, 1), rng.uniform(0.1, 3), rng.integers(1, 60))
        assert cllr(su, du) - cllr_min(su, du) >= -1e-9


def partition_oracle(y):
    """Least-squares monotone fit by enumerating every block partition of the ordered labels."""
    n = len(y)
    best, cost = None, math.inf
    for cuts in itertools.product((0, 1), repeat=n - 1):
        b = [0] + [k + 1 for k, c in enumerate(cuts) if c] + [n]
        means = [sum(y[lo:hi]) / (hi - lo) for lo, hi in zip(b, b[1:])]
        if any(v < u for u, v in zip(means, means[1:])):
            continue
        fit = [m for m, lo, hi in zip(means, b, b[1:]) for _ in range(hi - lo)]
        c = sum((a - f) ** 2 for a, f in zip(y, fit))
        if c < cost - 1e-15:
            best, cost = fit, c
    return best


@pytest.mark.criterion(3, C3)
def test_c3_pav_exhaustive():
    rng = np.random.default_rng(7)
    count = 0
    for n in range(2, 9):
        for y in itertools.product((0.0, 1.0), repeat=n):
            if min(y) == max(y):
                continue
            scores = rng.permutation(n) / n
            order = np.argsort(scores)
            want = np.empty(n)
            want[order] = partition_oracle([y[i] for i in order])
            assert np.max(np.abs(fit_pav(scores, np.array(y)).fitted - want)) <= 1e-9
            count += 1
    assert count == sum(2 ** n - 2 for n in range(2, 9))


# -- 4 -------------------------------------------------------------------------------------

TOY_X = np.array([[-2.0, 1.0], [-1.5, -0.5], [-1.0, 0.5], [-0.5, -1.0],
                  [0.5, 1.5], [1.0, -0.5], [1.5, 0.5], [2.0, -1.5]])
TOY_Y = np.array([0, 0, 0, 0, 1, 1, 1, 1.0])


@pytest.mark.criterion(4, C4)
def test_c4_gradient():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n, d = rng.integers(5, 50), rng.integers(1, 6)
        X, y = rng.normal(size=(n, d)), (rng.random(n) < 0.4).astype(float)
        theta, lam = rng.normal(size=d + 1), rng.uniform(0, 2)
        g = logistic_gradient(theta, X, y, lam)
        fd = np.array([(logistic_objective(theta + 1e-6 * e, X, y, lam)
                        - logistic_objective(theta - 1e-6 * e, X, y, lam)) / 2e-6 for e in np.eye(d + 1)])
        assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-5


@pytest.mark.criterion(4, C4)
def test_c4_toy_oracle():
    def objective(theta):
        z = theta[0] + TOY_X @ theta[1:]
        return np.sum(np.logaddexp(0, z) - TOY_Y * z) + 0.5 * theta[1:] @ theta[1:]
    res = minimize(objective, np.zeros(3), method="BFGS", options={"gtol": 1e-10})
    oracle = 1 / (1 + np.exp(-(res.x[0] + TOY_X @ res.x[1:])))
    got = predict_proba(fit_logistic(TOY_X, TOY_Y, 1.0), TOY_X)
    assert np.max(np.abs(got - oracle)) < 1e-4


# -- 5 -------------------------------------------------------------------------------------

@pytest.mark.criterion(5, C5)
def test_c5_kde_peak():
    h = 0.05
    assert abs(kde_density([0.42], h, 0.42) - 1 / (h * math.sqrt(2 * math.pi))) <= 1e-9


@pytest.mark.criterion(5, C5)
def test_c5_fitted_densities_integrate(small_corpus):
    res = run_experiment(small_corpus, ExperimentConfig(n_repeats=3), keep_pipelines=True)
    rng = np.random.default_rng(5)
    fitted = [r.pipeline.calibrator for r in res.repeats]
    fitted.append(KdeCalibrator(0.05).fit(rng.uniform(0, 1, 60), rng.random(60) < 0.3))
    for cal in fitted:
        for s in (cal.su_scores, cal.du_scores):
            h = cal.bandwidth
            x = np.linspace(s.min() - 5 * h, s.max() + 5 * h, 10_000)
            assert abs(np.trapezoid(kde_density(s, h, x), x) - 1.0) <= 1e-3


# -- 6 -------------------------------------------------------------------------------------

@pytest.mark.criterion(6, C6)
def test_c6_closed_form_bounds():
    b = elub_bounds(np.ones(20), np.r_[np.ones(10), np.zeros(10)].astype(bool))
    assert (b.lower, b.upper) == (1.0, 1.0)
    b = elub_bounds(np.r_[np.full(5, 3.0), np.zeros(9)], np.r_[np.ones(5), np.zeros(9)].astype(bool))
    assert b.upper == pytest.approx(1023.0, rel=1e-12)
    assert clip_lr(math.inf, ElubBounds(0.5, 7.0)) == 7.0 and clip_lr(0.0, ElubBounds(0.5, 7.0)) == 0.5


@pytest.mark.criterion(6, C6)
@pytest.mark.parametrize("calibrator", ["kde", "gaussian", "isotonic_pav", "none"])
def test_c6_emitted_lrs_within_bounds(small_corpus, calibrator):
    res = run_experiment(small_corpus, ExperimentConfig(n_repeats=5, calibrator=calibrator), keep_pipelines=True)
    for r in res.repeats:
        b = r.pipeline.bounds
        assert np.all(np.isfinite(r.test_lrs)) and np.all(r.test_lrs > 0)
        assert np.all((r.test_lrs >= b.lower) & (r.test_lrs <= b.upper))


# -- 7 -------------------------------------------------------------------------------------

@pytest.mark.slow
@pytest.mark.criterion(7, C7)
def test_c7_desk_scale_experiment():
    t0 = time.perf_counter()
    cfg = SimConfig()
    assert (cfg.n_users, cfg.phones_per_user, cfg.n_days) == (20, 2, 14)
    pop = simulate_population(cfg)
    corpus = LogCorpus(pop.logs, pop.users)
    assert corpus.synthesis.rate == 1.0
    res = run_experiment(corpus, ExperimentConfig())
    elapsed = time.perf_counter() - t0
    s = res.summary()
    su, du = res.pooled_lrs()
    print(f"\nCllr {s['cllr']['mean']:.4g} +- {s['cllr']['sd']:.3g}, Cllr_min {s['cllr_min']['mean']:.4g}, "
          f"median LR su {np.median(su):.3g} du {np.median(du):.3g}, {elapsed:.1f} s")
    assert len(res.records) == 100
    assert s["cllr"]["mean"] < 0.9
    assert s["cllr_min"]["mean"] <= s["cllr"]["mean"]
    assert np.median(su) > 1 and np.median(du) < 1
    assert elapsed < 300


# -- 8 -------------------------------------------------------------------------------------

@pytest.mark.criterion(8, C8)
def test_c8_thresholds_binning_compensation_exact():
    assert dislocation_count(switch_rows([30_000], [600])) == 1
    assert dislocation_count(switch_rows([30_000], [1200])) == 0
    assert DislocationCountScorer().pair_feature(switch_rows([30_000, 30_000, 24_000], [600, 899, 60])) == 2.0
    edges = onedim_edges(switch_rows([100, 5000], [30, 3000])[:, :3], 10)
    v = onedim_binning_features(switch_rows([1, 2], [1, 2])[:, :3], edges)
    assert v.shape == (30,)
    assert v[0] == 1.0 and v[10] == 1.0 and v[20] == 1.0 and v.sum() == 3.0
    assert compensated_days(1, 1.0, 0.5) == 2
    assert [c.days_per_track for _, c in sweep_grid("rate", ExperimentConfig())] == [1, 2, 3, 4]


@pytest.mark.slow
@pytest.mark.criterion(8, C8)
@pytest.mark.parametrize("dimension", SWEEP_DIMENSIONS)
def test_c8_sweeps_end_to_end(default_corpus, dimension, tmp_path):
    rows = sweep(default_corpus, ExperimentConfig(n_repeats=2), dimension)
    expected = {"scorer": 4, "calibrator": 6, "calibration_fraction": 19, "features": 8, "days": 4, "rate": 4}
    assert len(rows) == expected[dimension]
    export_report(rows, tmp_path)
    table = list(csv.DictReader(io.StringIO((tmp_path / "summary.csv").read_text())))
    assert [r["value"] for r in table] == [r.value for r in rows]
    assert all(math.isfinite(float(r["cllr_mean"])) for r in table)
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert len(summary["rows"]) == len(rows)
    for row in rows:
        prefix = f"{row.dimension}_{''.join(ch if ch.isalnum() or ch in '.-' else '_' for ch in row.value)}_"
        header = (tmp_path / f"{prefix}metrics.csv").read_text().splitlines()[0]
        assert header == "repeat,cllr,cllr_min,cllr_cal,min_lr,max_lr,n_su,n_du"
        assert (tmp_path / f"{prefix}lr_histogram.csv").read_text().startswith("hypothesis,bin_left,bin_right,count")


# -- 9 -------------------------------------------------------------------------------------

def _cli_session(root, capsys):
    """Run every command once under ``root``; return stdout per command with the root path removed."""
    (root).mkdir()
    (root / "sim.cfg").write_text("n_users = 6\nn_days = 4\n")
    (root / "eval.cfg").write_text("n_repeats = 3\n")
    steps = {
        "simulate": ["simulate", root / "sim", "--config", root / "sim.cfg"],
        "synthesize": ["synthesize", root / "sim", root / "cdr"],
        "train": ["train", root / "cdr", root / "pipe.json"],
        "evaluate": ["evaluate", root / "cdr", root / "report", "--config", root / "eval.cfg"],
        "sweep": ["evaluate", root / "cdr", root / "sweep", "--sweep", "calibrator", "--config", root / "eval.cfg"],
        "compare": ["compare", root / "pipe.json", root / "cdr" / "cdr" / "u000p0.csv",
                    root / "cdr" / "cdr" / "u000p1.csv"],
    }
    outputs = {}
    for name, argv in steps.items():
        assert main(["--seed", "13"] + [str(a) for a in argv]) == 0, name
        outputs[name] = capsys.readouterr().out.replace(str(root), "<root>")
    return outputs


@pytest.mark.criterion(9, C9)
def test_c9_cli_determinism(tmp_path, capsys):
    out_a = _cli_session(tmp_path / "a", capsys)
    out_b = _cli_session(tmp_path / "b", capsys)
    assert out_a == out_b
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b and len(files_a) > 20
    for f in files_a:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f
