"""Post-hoc robustification of a trained DRP network.

Calibration runs once on a fresh RCT sample drawn like the test data:

1. deterministic ROI predictions,
2. ``roi*``, the zero of the shared-score loss derivative, by bisection,
3. MC-dropout standard deviations ``r_hat``,
4. the conformal quantile ``q_hat`` of ``|roi* - roi_hat| / r_hat``,
5. the calibration form that maximizes AUCC on the calibration sample.

The resulting :class:`ConformalCalibration` is frozen and applied to test
features by :func:`rdrp_infer`.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from rdrp.dataset import RctDataset, diff_in_means
from rdrp.errors import (
    AssumptionViolationError,
    CalibrationDegenerateError,
    InvalidArgumentError,
    InvalidConfigError,
    RoiScopeError,
    ShapeError,
)
from rdrp.evaluation import DEFAULT_BUCKETS, aucc, cost_curve
from rdrp.model import MlpParams, clamp_roi, predict_roi, sigmoid

FORMS = ("product", "ratio", "sum")
IDENTITY = "identity"
STD_FLOOR = 1e-6
# retention this close to 1 is treated as keeping every unit
FULL_RETENTION_TOL = 1e-9


@dataclass(frozen=True)
class BinarySearchConfig:
    epsilon: float = 1e-3

    def __post_init__(self):
        if not 0 < self.epsilon < 0.1:
            raise InvalidConfigError(f"epsilon must lie in (0, 0.1), got {self.epsilon}")


@dataclass(frozen=True)
class McConfig:
    passes: int = 50
    retention: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.passes < 2:
            raise InvalidConfigError(f"MC dropout needs at least 2 passes, got {self.passes}")
        if not 0 < self.retention < 1:
            raise InvalidConfigError(f"retention must lie in (0, 1), got {self.retention}")


@dataclass
class ConformalCalibration:
    roi_star: float
    q_hat: float
    alpha: float
    mc: McConfig
    form: str
    n: int
    warnings: list[str] = field(default_factory=list)
    form_aucc: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "roi_star": self.roi_star,
            "q_hat": "inf" if math.isinf(self.q_hat) else self.q_hat,
            "alpha": self.alpha,
            "mc": {"passes": self.mc.passes, "retention": self.mc.retention, "seed": self.mc.seed},
            "form": self.form,
            "n": self.n,
            "warnings": list(self.warnings),
            "form_aucc": dict(self.form_aucc),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, doc: dict) -> ConformalCalibration:
        q_hat = doc["q_hat"]
        mc = doc["mc"]
        return cls(
            roi_star=float(doc["roi_star"]),
            q_hat=math.inf if q_hat == "inf" else float(q_hat),
            alpha=float(doc["alpha"]),
            mc=McConfig(passes=int(mc["passes"]), retention=float(mc["retention"]), seed=int(mc["seed"])),
            form=doc["form"],
            n=int(doc["n"]),
            warnings=list(doc.get("warnings", [])),
            form_aucc=dict(doc.get("form_aucc", {})),
        )

    @classmethod
    def from_json(cls, text: str) -> ConformalCalibration:
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class RoiPrediction:
    roi_hat: float
    r_hat: float
    lo: float
    hi: float
    roi_tilde: float


@dataclass(frozen=True, eq=False)
class RoiPredictions:
    """Per-sample outputs stored column-wise; indexing yields :class:`RoiPrediction`."""

    roi_hat: np.ndarray
    r_hat: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    roi_tilde: np.ndarray

    def __len__(self) -> int:
        return self.roi_hat.size

    def __getitem__(self, i: int) -> RoiPrediction:
        return RoiPrediction(
            float(self.roi_hat[i]), float(self.r_hat[i]), float(self.lo[i]), float(self.hi[i]),
            float(self.roi_tilde[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))


# -- roi* ------------------------------------------------------------------


def logit(p):
    return np.log(p) - np.log1p(-p)


def loss_derivative(s: float, ds: RctDataset) -> float:
    """Derivative of the DRP loss when every sample shares the score ``s``.

    Equals ``sigmoid(s) * dYc - dYr`` with the treated-minus-control mean
    differences of revenue and cost.
    """
    delta_r, delta_c = diff_in_means(ds)
    return float(sigmoid(s) * delta_c - delta_r)


def binary_search_roi(
    derivative: Callable[[float], float], epsilon: float, grad_tol: float | None = None
) -> tuple[float, int]:
    """Bisection on (0, 1) for the zero of an increasing derivative.

    Stops when the bracket is at most ``epsilon`` wide or the derivative at
    the midpoint is below ``grad_tol`` (default ``epsilon``) in magnitude.
    Returns the midpoint and the number of bisection steps taken.
    """
    if grad_tol is None:
        grad_tol = epsilon
    lo, hi = 0.0, 1.0
    roi = (lo + hi) / 2
    grad = derivative(float(logit(roi)))
    steps = 0
    while abs(hi - lo) > epsilon:
        if abs(grad) < grad_tol:
            break
        if grad > 0:
            hi = roi
        else:
            lo = roi
        roi = (lo + hi) / 2
        grad = derivative(float(logit(roi)))
        steps += 1
    return roi, steps


def find_roi_star(ds: RctDataset, cfg: BinarySearchConfig = BinarySearchConfig(), clamp: bool = False) -> float:
    """Global convergence point of the DRP loss on ``ds``.

    Raises :class:`AssumptionViolationError` if the cost uplift is not
    positive, and :class:`RoiScopeError` if the diff-in-means ratio falls
    outside ``(eps, 1 - eps)``; with ``clamp=True`` the nearest boundary is
    returned with a warning instead.
    """
    delta_r, delta_c = diff_in_means(ds)
    if delta_c <= 0:
        raise AssumptionViolationError(f"cost uplift must be positive, got {delta_c:.6g}")
    eps = cfg.epsilon
    ratio = delta_r / delta_c
    if not eps < ratio < 1 - eps:
        msg = f"diff-in-means ROI {ratio:.6g} outside ({eps}, {1 - eps})"
        if not clamp:
            raise RoiScopeError(msg)
        warnings.warn(msg + "; clamped to boundary", RuntimeWarning, stacklevel=2)
        return eps if ratio <= eps else 1 - eps

    def derivative(s):
        return float(sigmoid(s) * delta_c - delta_r)

    # |L'| = dYc * |roi - ratio|, so a raw epsilon test would allow an error of
    # epsilon / dYc; testing in ROI units keeps the result within epsilon
    roi, _ = binary_search_roi(derivative, eps, grad_tol=eps * delta_c)
    return roi


# -- MC dropout ------------------------------------------------------------


def mc_pass_rng(mc: McConfig, k: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([mc.seed, k]))


def mc_dropout_stats(params: MlpParams, x, mc: McConfig) -> tuple[np.ndarray, np.ndarray]:
    """Mean and sample std (ddof=1) of ``sigmoid(s)`` over ``mc.passes`` dropout passes.

    Pass ``k`` draws its mask from a generator seeded by ``(mc.seed, k)``.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != params.d:
        raise ShapeError(f"expected {params.d} features, got shape {x.shape}")
    h = np.maximum(x2 @ params.w1.T + params.b1, 0.0)
    p = mc.retention
    if 1.0 - p < FULL_RETENTION_TOL:
        roi = clamp_roi(sigmoid(h @ params.w2 + params.b2))
        mean, std = roi, np.zeros_like(roi)
    else:
        draws = np.empty((mc.passes, h.shape[0]))
        for k in range(mc.passes):
            mask = mc_pass_rng(mc, k).random(h.shape) < p
            draws[k] = clamp_roi(sigmoid((h * mask / p) @ params.w2 + params.b2))
        mean = draws.mean(axis=0)
        std = draws.std(axis=0, ddof=1)
    if single:
        return float(mean[0]), float(std[0])
    return mean, std


# -- conformal scores and intervals ----------------------------------------


def conformal_scores(roi_star: float, roi_hat, r_hat) -> np.ndarray:
    roi_hat = np.asarray(roi_hat, dtype=np.float64)
    r_hat = np.asarray(r_hat, dtype=np.float64)
    if roi_hat.shape != r_hat.shape:
        raise ShapeError(f"roi_hat {roi_hat.shape} and r_hat {r_hat.shape} differ in shape")
    if not 0 < roi_star < 1:
        raise RoiScopeError(f"roi_star must lie in (0, 1), got {roi_star}")
    return np.abs(roi_star - roi_hat) / np.maximum(r_hat, STD_FLOOR)


def conformal_quantile(scores, alpha: float) -> float:
    """The ceil((1 - alpha)(n + 1))-th smallest score, or +inf when that exceeds n."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    n = scores.size
    if n == 0:
        raise InvalidArgumentError("no conformal scores given")
    if not 0 < alpha < 1:
        raise InvalidArgumentError(f"alpha must lie in (0, 1), got {alpha}")
    k = math.ceil((1 - alpha) * (n + 1))
    if k > n:
        return math.inf
    return float(np.partition(scores, k - 1)[k - 1])


def prediction_interval(roi_hat, r_hat, q_hat: float):
    """``roi_hat -/+ r_hat * q_hat`` clamped to [0, 1]; infinite ``q_hat`` gives [0, 1]."""
    roi_hat = np.asarray(roi_hat, dtype=np.float64)
    r_hat = np.asarray(r_hat, dtype=np.float64)
    if math.isinf(q_hat):
        lo, hi = np.zeros_like(roi_hat + r_hat), np.ones_like(roi_hat + r_hat)
    else:
        half = r_hat * q_hat
        lo = np.clip(roi_hat - half, 0.0, 1.0)
        hi = np.clip(roi_hat + half, 0.0, 1.0)
    if lo.ndim == 0:
        return float(lo), float(hi)
    return lo, hi


def apply_form(form: str, roi_hat, r_hat, q_hat: float):
    """Combine point estimate and interval half-width into a ranking score."""
    if math.isinf(q_hat) or math.isnan(q_hat):
        raise CalibrationDegenerateError("calibration forms need a finite q_hat")
    roi_hat = np.asarray(roi_hat, dtype=np.float64)
    half = np.asarray(r_hat, dtype=np.float64) * q_hat
    if form == "product":
        out = roi_hat * (roi_hat + half)
    elif form == "ratio":
        out = roi_hat / np.maximum(half, STD_FLOOR)
    elif form == "sum":
        out = roi_hat + half
    elif form == IDENTITY:
        out = roi_hat + 0.0 * half
    else:
        raise InvalidArgumentError(f"unknown calibration form {form!r}")
    return float(out) if out.ndim == 0 else out


def form_auccs(
    roi_hat, r_hat, cali_ds: RctDataset, q_hat: float,
    candidate_forms: Sequence[str] = FORMS, buckets: int = DEFAULT_BUCKETS,
) -> dict[str, float]:
    return {
        form: aucc(cost_curve(apply_form(form, roi_hat, r_hat, q_hat), cali_ds, buckets))
        for form in candidate_forms
    }


def select_form(
    roi_hat, r_hat, cali_ds: RctDataset, q_hat: float,
    candidate_forms: Sequence[str] = FORMS, buckets: int = DEFAULT_BUCKETS,
) -> str:
    """Form with the highest calibration-set AUCC; earlier candidates win ties."""
    scores = form_auccs(roi_hat, r_hat, cali_ds, q_hat, candidate_forms, buckets)
    best = candidate_forms[0]
    for form in candidate_forms[1:]:
        if scores[form] > scores[best]:
            best = form
    return best


# -- full pipeline ---------------------------------------------------------


def rdrp_calibrate(
    params: MlpParams,
    cali_ds: RctDataset,
    alpha: float = 0.1,
    mc: McConfig = McConfig(),
    bsearch: BinarySearchConfig = BinarySearchConfig(),
    include_identity: bool = False,
    clamp: bool = False,
    buckets: int = DEFAULT_BUCKETS,
) -> ConformalCalibration:
    """Calibration phase: roi*, MC std, q_hat and form selection on ``cali_ds``."""
    if not 0 < alpha < 1:
        raise InvalidArgumentError(f"alpha must lie in (0, 1), got {alpha}")
    roi_hat = predict_roi(params, cali_ds.x)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        roi_star = find_roi_star(cali_ds, bsearch, clamp=clamp)
    _, r_hat = mc_dropout_stats(params, cali_ds.x, mc)
    q_hat = conformal_quantile(conformal_scores(roi_star, roi_hat, r_hat), alpha)
    forms = FORMS + ((IDENTITY,) if include_identity else ())
    per_form = form_auccs(roi_hat, r_hat, cali_ds, q_hat, forms, buckets)
    form = forms[0]
    for f in forms[1:]:
        if per_form[f] > per_form[form]:
            form = f
    return ConformalCalibration(
        roi_star=roi_star, q_hat=q_hat, alpha=alpha, mc=mc, form=form, n=cali_ds.n,
        warnings=[str(w.message) for w in caught], form_aucc=per_form,
    )


def rdrp_infer(params: MlpParams, calibration: ConformalCalibration, x) -> RoiPredictions:
    """Test phase: point estimate, MC std, interval and calibrated score per row."""
    x = np.asarray(x, dtype=np.float64)
    roi_hat = np.atleast_1d(predict_roi(params, x))
    _, r_hat = mc_dropout_stats(params, np.atleast_2d(x), calibration.mc)
    lo, hi = prediction_interval(roi_hat, r_hat, calibration.q_hat)
    roi_tilde = apply_form(calibration.form, roi_hat, r_hat, calibration.q_hat)
    return RoiPredictions(
        roi_hat=roi_hat, r_hat=np.asarray(r_hat), lo=np.atleast_1d(lo), hi=np.atleast_1d(hi),
        roi_tilde=np.atleast_1d(roi_tilde),
    )


def rdrp_predict(
    params: MlpParams,
    cali_ds: RctDataset,
    test_features,
    alpha: float = 0.1,
    mc: McConfig = McConfig(),
    bsearch: BinarySearchConfig = BinarySearchConfig(),
    include_identity: bool = False,
    clamp: bool = False,
) -> tuple[RoiPredictions, ConformalCalibration]:
    calibration = rdrp_calibrate(params, cali_ds, alpha, mc, bsearch, include_identity, clamp)
    return rdrp_infer(params, calibration, test_features), calibration
