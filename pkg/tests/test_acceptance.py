"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines go straight to the terminal (capture disabled) so ``pytest -v``
shows the measured values next to the thresholds.
"""

import math
import time
import warnings

import numpy as np
import pytest

from oracles import (
    central_difference,
    is_roi_prefix,
    knapsack_optimum,
    max_relative_error,
    order_statistic_quantile,
    ratio_of_means,
)
from rdrp import conformal
from rdrp.allocation import AllocationInstance, greedy_allocate
from rdrp.conformal import BinarySearchConfig, McConfig, conformal_quantile, find_roi_star, rdrp_predict
from rdrp.dataset import RctDataset, SyntheticConfig, diff_in_means, generate_synthetic, split
from rdrp.evaluation import aucc, cost_curve, empirical_coverage
from rdrp.experiment import ExperimentConfig, emit_report, metrics_without_timings, run_experiment
from rdrp.model import MlpParams, TrainConfig, drp_loss, drp_loss_from_scores, drp_loss_grad, init_params, train


@pytest.fixture
def verdict(capsys):
    def emit(number, name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number} {name}: {detail}")
        assert ok, f"criterion {number} {name}: {detail}"

    return emit


def random_rct(rng, n):
    """Small RCT batch with both arms present and mixed outcome scales."""
    t = np.zeros(n, dtype=int)
    t[: n // 2] = 1
    rng.shuffle(t)
    y_c = rng.exponential(1.0, n) * rng.integers(0, 2, n)
    y_r = rng.uniform(0, 1, n) * y_c + rng.normal(0, 0.1, n)
    return RctDataset(rng.normal(size=(n, 1)), t, y_r, y_c)


# 1 -------------------------------------------------------------------------


def test_criterion_1_gradient_oracle(verdict):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        d, hidden, n = int(rng.integers(1, 6)), int(rng.integers(10, 17)), int(rng.integers(4, 33))
        ds = random_rct(rng, n)
        ds = RctDataset(rng.normal(size=(n, d)), ds.t, ds.y_r, ds.y_c)
        p = init_params(d, hidden, int(rng.integers(2**31)))
        p = MlpParams(p.w1, rng.normal(scale=0.1, size=hidden), p.w2, float(rng.normal()))
        analytic = drp_loss_grad(p, ds).flat()
        numeric = central_difference(lambda th: drp_loss(MlpParams.from_flat(th, d, hidden), ds), p.flat())
        worst = max(worst, max_relative_error(analytic, numeric))
    elapsed = time.perf_counter() - start
    verdict(1, "gradient oracle", worst < 1e-5 and elapsed < 10,
            f"max rel err {worst:.2e} (< 1e-5), {elapsed:.2f} s (< 10 s)")


# 2 -------------------------------------------------------------------------


def test_criterion_2_convexity_probe(verdict):
    rng = np.random.default_rng(202)
    grid = np.linspace(-6, 6, 241)
    worst, batches = math.inf, 0
    while batches < 20:
        ds = random_rct(rng, int(rng.integers(6, 40)))
        if diff_in_means(ds)[1] <= 0:
            continue
        batches += 1
        values = np.array([drp_loss_from_scores(np.full(ds.n, s), ds.t, ds.y_r, ds.y_c) for s in grid])
        worst = min(worst, float((values[:-2] - 2 * values[1:-1] + values[2:]).min()))
    verdict(2, "convexity probe", worst >= -1e-9, f"min second difference {worst:.3e} (>= -1e-9) on 20 batches")


# 3 -------------------------------------------------------------------------


def test_criterion_3_roi_star_oracle(verdict, monkeypatch):
    steps_seen = []
    original = conformal.binary_search_roi

    def counting(*args, **kwargs):
        roi, steps = original(*args, **kwargs)
        steps_seen.append(steps)
        return roi, steps

    monkeypatch.setattr(conformal, "binary_search_roi", counting)
    rng = np.random.default_rng(303)
    eps = 1e-3
    bound = math.floor(math.log2(1 / eps)) + 1
    worst_err, done = 0.0, 0
    start = time.perf_counter()
    while done < 100:
        n = int(rng.integers(20, 400))
        t = rng.integers(0, 2, n)
        if t.all() or not t.any():
            continue
        y_c = rng.exponential(1.0, n) + t * rng.uniform(0.1, 1.0)
        y_r = rng.uniform(0, 1) * y_c + rng.normal(0, 0.05, n)
        target = ratio_of_means(t, y_r, y_c)
        if not (np.mean(y_c[t == 1]) > np.mean(y_c[t == 0]) and eps < target < 1 - eps):
            continue
        got = find_roi_star(RctDataset(np.zeros((n, 1)), t, y_r, y_c), BinarySearchConfig(eps))
        worst_err = max(worst_err, abs(got - target))
        done += 1
    elapsed = time.perf_counter() - start
    ok = worst_err <= 2 * eps and max(steps_seen) <= bound and elapsed < 5
    verdict(3, "roi* oracle", ok,
            f"max |err| {worst_err:.2e} (<= {2 * eps:g}), max steps {max(steps_seen)} (<= {bound}), "
            f"{elapsed:.2f} s (< 5 s)")


# 4 -------------------------------------------------------------------------


def test_criterion_4_conformal_coverage(verdict):
    start = time.perf_counter()
    covs = []
    for seed in range(20):
        ds, _ = generate_synthetic(SyntheticConfig(n=14000, seed=seed))
        tr, cali, test = split(ds, (10000 / 14000, 2000 / 14000, 2000 / 14000), seed)
        params = train(tr, TrainConfig(epochs=10, seed=seed))
        pred, _ = rdrp_predict(params, cali, test.x, alpha=0.1, mc=McConfig(seed=seed), clamp=True)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            roi_star_test = find_roi_star(test, clamp=True)
        covs.append(empirical_coverage(pred.lo, pred.hi, roi_star_test))
    elapsed = time.perf_counter() - start
    mean = float(np.mean(covs))
    verdict(4, "conformal coverage", 0.87 <= mean <= 0.97 and elapsed < 120,
            f"mean coverage {mean:.4f} (in [0.87, 0.97]) over 20 seeds, {elapsed:.1f} s (< 120 s)")


# 5 -------------------------------------------------------------------------


def test_criterion_5_quantile_formula(verdict):
    rng = np.random.default_rng(505)
    mismatches, infinities, cases = 0, 0, 0
    for n in range(1, 201):
        scores = rng.exponential(size=n)
        for alpha in (0.05, 0.1, 0.2):
            expected = order_statistic_quantile(scores.tolist(), alpha)
            got = conformal_quantile(scores, alpha)
            infinities += math.isinf(expected)
            mismatches += not (got == expected)
            cases += 1
    verdict(5, "quantile formula", mismatches == 0 and infinities > 0,
            f"{mismatches} mismatches in {cases} cases ({infinities} infinite)")


# 6 -------------------------------------------------------------------------


def test_criterion_6_knapsack_oracle(verdict):
    rng = np.random.default_rng(606)
    start = time.perf_counter()
    bad = []
    for k in range(500):
        m = int(rng.integers(1, 13))
        tau_r, tau_c = rng.uniform(0.01, 1, m), rng.uniform(0.01, 1, m)
        inst = AllocationInstance(tau_r, tau_c, float(rng.uniform(0, 1) * tau_c.sum()))
        out = greedy_allocate(inst)
        feasible = out.total_cost <= inst.budget * (1 + 1e-12)
        opt = knapsack_optimum(tau_r.tolist(), tau_c.tolist(), inst.budget)
        if not (feasible and is_roi_prefix(out.z.tolist(), tau_r.tolist(), tau_c.tolist())
                and out.total_revenue >= opt - tau_r.max() - 1e-12):
            bad.append(k)
    elapsed = time.perf_counter() - start
    verdict(6, "knapsack oracle", not bad and elapsed < 30,
            f"{len(bad)} of 500 instances violate feasibility/prefix/bound, {elapsed:.1f} s (< 30 s)")


# 7 -------------------------------------------------------------------------


def test_criterion_7_aucc_sanity(verdict):
    rnd, oracle, rev = [], [], []
    for seed in range(10):
        ds, gt = generate_synthetic(SyntheticConfig(n=20000, seed=seed))
        rnd.append(aucc(cost_curve(np.random.default_rng([seed, 7]).random(ds.n), ds)))
        oracle.append(aucc(cost_curve(gt.roi, ds)))
        rev.append(aucc(cost_curve(-gt.roi, ds)))
    rnd, oracle, rev = map(np.array, (rnd, oracle, rev))
    ok = (np.abs(rnd - 0.5) <= 0.05).all() and (oracle >= rnd + 0.05).all() and (rev < 0.5).all()
    verdict(7, "AUCC sanity", ok,
            f"random in [{rnd.min():.4f}, {rnd.max():.4f}] (0.50 +/- 0.05), "
            f"min oracle - random {np.min(oracle - rnd):.4f} (>= 0.05), max reversed {rev.max():.4f} (< 0.5)")


# 8, 9, 10 ------------------------------------------------------------------


@pytest.fixture(scope="module")
def full_runs(tmp_path_factory):
    """The default four-setting experiment, run twice from the same config."""
    cfg = ExperimentConfig.from_dict({"version": 1})
    out = []
    for name in ("first", "second"):
        start = time.perf_counter()
        report = run_experiment(cfg)
        elapsed = time.perf_counter() - start
        path = tmp_path_factory.mktemp(name)
        emit_report(report, path)
        out.append((report, elapsed, path / "metrics.json"))
    return out


def test_criterion_8_directional_reproduction(verdict, full_runs):
    report, elapsed, _ = full_runs[0]
    parts = []
    ok = not report.failed and elapsed < 900
    for setting in ("SuCo", "InNo", "InCo"):
        r, d = report.mean_aucc(setting, "rdrp"), report.mean_aucc(setting, "drp")
        ok &= r >= d
        parts.append(f"{setting} rdrp {r:.4f} vs drp {d:.4f}")
    d, rnd = report.mean_aucc("SuNo", "drp"), report.mean_aucc("SuNo", "random")
    ok &= d >= rnd + 0.03
    parts.append(f"SuNo drp {d:.4f} vs random+0.03 {rnd + 0.03:.4f}")
    verdict(8, "directional reproduction", ok, "; ".join(parts) + f"; {elapsed:.0f} s (< 900 s)")


def test_criterion_9_determinism(verdict, full_runs):
    a, b = full_runs[0][2], full_runs[1][2]
    same = metrics_without_timings(a) == metrics_without_timings(b)
    verdict(9, "determinism", same, "metrics.json identical without timings" if same else "metrics.json differ")


def test_criterion_10_robustness_gap(verdict, full_runs):
    report = full_runs[0][0]
    gap = {s: report.mean_aucc(s, "rdrp") - report.mean_aucc(s, "drp") for s in ("SuNo", "InCo")}
    verdict(10, "robustness gap", gap["InCo"] >= gap["SuNo"] - 0.005,
            f"InCo gap {gap['InCo']:+.4f} vs SuNo gap {gap['SuNo']:+.4f} (tolerance -0.005)")
