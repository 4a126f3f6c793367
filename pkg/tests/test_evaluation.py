import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rdrp.conformal import conformal_quantile, conformal_scores, prediction_interval
from rdrp.dataset import RctDataset, SyntheticConfig, generate_synthetic
from rdrp.errors import (
    DegenerateDatasetError,
    DegenerateNormalizationError,
    InvalidArgumentError,
    ShapeError,
)
from rdrp.evaluation import CostCurve, aucc, aucc_report, cost_curve, empirical_coverage, write_curve_csv


def curve(points):
    pts = np.asarray(points, dtype=float)
    return CostCurve(pts[:, 0], pts[:, 1], len(points) - 1)


@pytest.mark.parametrize(
    "points, area",
    [
        ([(0, 0), (1, 1)], 0.5),
        ([(0, 0), (0, 1), (1, 1)], 1.0),
        ([(0, 0), (1, 0), (1, 1)], 0.0),
    ],
)
def test_aucc_examples(points, area):
    assert aucc(curve(points)) == pytest.approx(area)


def test_aucc_needs_two_points():
    with pytest.raises(InvalidArgumentError):
        aucc(curve([(0, 0)]))


@pytest.fixture(scope="module")
def synthetic():
    return generate_synthetic(SyntheticConfig(n=20000, seed=31))


def test_random_oracle_and_reversed(synthetic):
    ds, gt = synthetic
    rnd = aucc(cost_curve(np.random.default_rng(0).random(ds.n), ds))
    assert rnd == pytest.approx(0.5, abs=0.05)
    assert aucc(cost_curve(gt.roi, ds)) >= rnd + 0.05
    assert aucc(cost_curve(-gt.roi, ds)) < 0.5


def test_curve_endpoints(synthetic):
    ds, gt = synthetic
    c = cost_curve(gt.roi, ds, buckets=50)
    assert tuple(c.points[0]) == (0.0, 0.0)
    assert tuple(c.points[-1]) == (1.0, 1.0)
    assert c.points.shape == (51, 2)


def test_ranking_only(synthetic):
    ds, gt = synthetic
    a = aucc(cost_curve(gt.roi, ds))
    assert aucc(cost_curve(np.exp(5 * gt.roi) - 3, ds)) == a


def test_bucket_stability(synthetic):
    ds, gt = synthetic
    fine = aucc(cost_curve(gt.roi, ds, buckets=ds.n))
    for b in (50, 100, 200):
        assert aucc(cost_curve(gt.roi, ds, buckets=b)) == pytest.approx(fine, abs=0.01)


def test_bucket_count_capped_at_n():
    ds = RctDataset(np.zeros((4, 1)), [1, 0, 1, 0], [1, 0, 0.5, 0], [1, 0, 1, 0])
    c = cost_curve([4, 3, 2, 1], ds, buckets=100)
    assert c.buckets == 4
    # the first segment holds only a treated row, so it repeats the origin
    assert c.cost[1] == 0.0 and c.value[1] == 0.0


def test_hand_computed_curve():
    # top-2: treated (y_r 1, y_c 1) and control (0, 0) -> V = 1 * 2, C = 1 * 2
    # all 4: treated mean (1 + 0.5)/2, control 0 -> V = 0.75 * 4 = 3, C = 1 * 4 = 4
    ds = RctDataset(np.zeros((4, 1)), [1, 0, 1, 0], [1, 0, 0.5, 0], [1, 0, 1, 0])
    c = cost_curve([4, 3, 2, 1], ds, buckets=2)
    np.testing.assert_allclose(c.cost, [0, 0.5, 1])
    np.testing.assert_allclose(c.value, [0, 2 / 3, 1])
    assert aucc(c) == pytest.approx(0.5 * 0.5 * 2 / 3 + 0.5 * (2 / 3 + 1) / 2)


def test_cost_curve_errors(synthetic):
    ds, _ = synthetic
    with pytest.raises(ShapeError):
        cost_curve(np.zeros(3), ds)
    with pytest.raises(InvalidArgumentError):
        cost_curve(np.zeros(ds.n), ds, buckets=1)
    single = RctDataset(np.zeros((3, 1)), [1, 1, 1], [1, 1, 1], [1, 1, 1])
    with pytest.raises(DegenerateDatasetError):
        cost_curve([1, 2, 3], single)
    flat = RctDataset(np.zeros((4, 1)), [1, 0, 1, 0], [1, 0, 1, 0], [0.5] * 4)
    with pytest.raises(DegenerateNormalizationError):
        cost_curve([1, 2, 3, 4], flat)


def test_report_and_csv(tmp_path, synthetic):
    ds, gt = synthetic
    rep = aucc_report(gt.roi, ds)
    assert rep.buckets == 100 and rep.n == ds.n
    write_curve_csv(cost_curve(gt.roi, ds), tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "bucket,norm_cost,norm_value" and len(lines) == 102


def test_coverage_examples():
    assert empirical_coverage(np.zeros(5), np.ones(5), 0.3) == 1.0
    assert empirical_coverage(np.full(5, 0.2), np.full(5, 0.2), 0.3) == 0.0
    assert empirical_coverage([0.1, 0.4], [0.35, 0.5], 0.3) == 0.5
    with pytest.raises(InvalidArgumentError):
        empirical_coverage([], [], 0.3)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), a1=st.floats(0.01, 0.5), gap=st.floats(0, 0.45))
def test_coverage_non_increasing_in_alpha(seed, a1, gap):
    rng = np.random.default_rng(seed)
    roi_hat = rng.uniform(0.2, 0.8, 300)
    r_hat = rng.uniform(0.01, 0.1, 300)
    scores = conformal_scores(0.5, roi_hat, r_hat)
    q1, q2 = conformal_quantile(scores, a1), conformal_quantile(scores, a1 + gap)
    assert q1 >= q2
    test_hat = rng.uniform(0.2, 0.8, 300)
    cov1 = empirical_coverage(*prediction_interval(test_hat, r_hat, q1), 0.5)
    cov2 = empirical_coverage(*prediction_interval(test_hat, r_hat, q2), 0.5)
    assert cov1 >= cov2
