"""Cost curves, AUCC and empirical interval coverage."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import pandas as pd

from rdrp.dataset import RctDataset
from rdrp.errors import (
    DegenerateDatasetError,
    DegenerateNormalizationError,
    InvalidArgumentError,
    ShapeError,
)

DEFAULT_BUCKETS = 100


@dataclass(frozen=True, eq=False)
class CostCurve:
    """Normalized cumulative incremental cost (x) against value (y), starting at (0, 0)."""

    cost: np.ndarray
    value: np.ndarray
    buckets: int

    @property
    def points(self) -> np.ndarray:
        return np.column_stack([self.cost, self.value])


@dataclass(frozen=True)
class AuccReport:
    aucc: float
    buckets: int
    n: int


def rank_order(scores) -> np.ndarray:
    """Indices sorted by descending score; ties keep original index order."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(scores.size), -scores))


def cost_curve(scores, ds: RctDataset, buckets: int = DEFAULT_BUCKETS) -> CostCurve:
    """Cumulative incremental cost/value of the top-k segments of a ranking.

    For each bucket boundary k, the top-k samples give
    ``V_k = (mean treated y_r - mean control y_r) * k`` and ``C_k`` likewise
    with y_c. A segment missing an arm repeats the previous point. Both axes
    are divided by the full-population values.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (ds.n,):
        raise ShapeError(f"expected {ds.n} scores, got shape {scores.shape}")
    if buckets < 2:
        raise InvalidArgumentError("buckets must be >= 2")
    if ds.n1 == 0 or ds.n0 == 0:
        raise DegenerateDatasetError(f"cost curve needs both arms, got N1={ds.n1}, N0={ds.n0}")

    order = rank_order(scores)
    t = ds.t[order].astype(np.float64)
    c = 1.0 - t
    cum_n1 = np.cumsum(t)
    cum_n0 = np.cumsum(c)
    cum_r1 = np.cumsum(ds.y_r[order] * t)
    cum_r0 = np.cumsum(ds.y_r[order] * c)
    cum_c1 = np.cumsum(ds.y_c[order] * t)
    cum_c0 = np.cumsum(ds.y_c[order] * c)

    buckets = min(buckets, ds.n)
    ks = np.unique(np.ceil(np.arange(1, buckets + 1) * ds.n / buckets).astype(np.int64))
    cost = [0.0]
    value = [0.0]
    for k in ks:
        i = k - 1
        n1, n0 = cum_n1[i], cum_n0[i]
        if n1 == 0 or n0 == 0:
            cost.append(cost[-1])
            value.append(value[-1])
            continue
        cost.append((cum_c1[i] / n1 - cum_c0[i] / n0) * k)
        value.append((cum_r1[i] / n1 - cum_r0[i] / n0) * k)
    cost = np.asarray(cost)
    value = np.asarray(value)
    if cost[-1] == 0.0:
        raise DegenerateNormalizationError("total incremental cost is zero")
    if value[-1] == 0.0:
        raise DegenerateNormalizationError("total incremental value is zero")
    return CostCurve(cost=cost / cost[-1], value=value / value[-1], buckets=int(buckets))


def aucc(curve: CostCurve) -> float:
    """Trapezoidal area under the normalized cost curve."""
    x, y = np.asarray(curve.cost), np.asarray(curve.value)
    if x.size < 2:
        raise InvalidArgumentError("a curve needs at least two points")
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) * 0.5))


def aucc_report(scores, ds: RctDataset, buckets: int = DEFAULT_BUCKETS) -> AuccReport:
    curve = cost_curve(scores, ds, buckets)
    return AuccReport(aucc=aucc(curve), buckets=curve.buckets, n=ds.n)


def empirical_coverage(lo, hi, roi_star_test: float) -> float:
    """Fraction of intervals ``[lo, hi]`` that contain ``roi_star_test``."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if lo.size == 0:
        raise InvalidArgumentError("no intervals given")
    if lo.shape != hi.shape:
        raise ShapeError("lo and hi must have the same shape")
    return float(np.mean((lo <= roi_star_test) & (roi_star_test <= hi)))


def write_curve_csv(curve: CostCurve, path: str | os.PathLike) -> None:
    frame = pd.DataFrame(
        {"bucket": np.arange(curve.cost.size), "norm_cost": curve.cost, "norm_value": curve.value}
    )
    frame.to_csv(path, index=False, float_format="%.17g")
