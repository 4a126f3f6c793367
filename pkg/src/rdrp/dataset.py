"""RCT datasets: synthetic generation, CSV ingestion, rescaling, thinning and splits."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np
import pandas as pd

from rdrp.errors import (
    DegenerateDatasetError,
    InvalidArgumentError,
    InvalidConfigError,
    ParseError,
    SchemaError,
    ValidationError,
)

OUTCOME_MODELS = ("bernoulli", "gaussian")
SHIFT_KINDS = ("none", "mean_shift", "mixture_reweight")

# Column names used by the Criteo uplift v2 release: visits are the cost,
# conversions the revenue.
CRITEO_COLUMN_MAP = {
    "features": [f"f{i}" for i in range(12)],
    "treatment": "treatment",
    "revenue": "conversion",
    "cost": "visit",
}

ROI_MIN, ROI_MAX = 0.05, 0.95


@dataclass(frozen=True)
class RctSample:
    x: np.ndarray
    t: int
    y_r: float
    y_c: float


@dataclass(frozen=True, eq=False)
class RctDataset:
    """Column-oriented RCT data. Arrays are frozen read-only on construction."""

    x: np.ndarray
    t: np.ndarray
    y_r: np.ndarray
    y_c: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=np.float64, ndmin=2, copy=True)
        t = np.array(self.t, dtype=np.int8, ndmin=1, copy=True)
        y_r = np.array(self.y_r, dtype=np.float64, ndmin=1, copy=True)
        y_c = np.array(self.y_c, dtype=np.float64, ndmin=1, copy=True)
        n = x.shape[0]
        if x.ndim != 2 or not (t.shape == y_r.shape == y_c.shape == (n,)):
            raise ValidationError(
                f"inconsistent shapes: x {x.shape}, t {t.shape}, y_r {y_r.shape}, y_c {y_c.shape}"
            )
        if not np.isin(t, (0, 1)).all():
            raise ValidationError("treatment must be 0 or 1")
        if not (np.isfinite(x).all() and np.isfinite(y_r).all() and np.isfinite(y_c).all()):
            raise ValidationError("features and outcomes must be finite")
        for name, arr in (("x", x), ("t", t), ("y_r", y_r), ("y_c", y_c)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def n1(self) -> int:
        return int(self.t.sum())

    @property
    def n0(self) -> int:
        return self.n - self.n1

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[RctSample]:
        for i in range(self.n):
            yield self[i]

    def __getitem__(self, i: int) -> RctSample:
        return RctSample(self.x[i], int(self.t[i]), float(self.y_r[i]), float(self.y_c[i]))

    def take(self, idx) -> RctDataset:
        idx = np.asarray(idx)
        return RctDataset(self.x[idx], self.t[idx], self.y_r[idx], self.y_c[idx])

    def equals(self, other: RctDataset) -> bool:
        return all(
            np.array_equal(a, b)
            for a, b in ((self.x, other.x), (self.t, other.t), (self.y_r, other.y_r), (self.y_c, other.y_c))
        )

    @classmethod
    def from_samples(cls, samples: Sequence[RctSample]) -> RctDataset:
        return cls(
            np.array([s.x for s in samples], dtype=np.float64),
            [s.t for s in samples],
            [s.y_r for s in samples],
            [s.y_c for s in samples],
        )


@dataclass(frozen=True, eq=False)
class GroundTruth:
    tau_r: np.ndarray
    tau_c: np.ndarray
    roi: np.ndarray

    def take(self, idx) -> GroundTruth:
        return GroundTruth(self.tau_r[idx], self.tau_c[idx], self.roi[idx])


@dataclass(frozen=True)
class SyntheticConfig:
    """Synthetic RCT generator settings.

    The response surfaces (ROI, cost uplift and baselines) are linear-sigmoid
    functions whose coefficients come from ``structure_seed``, so every
    ``seed`` draws a fresh sample from the same population.
    """

    n: int = 10000
    d: int = 12
    outcome_model: str = "bernoulli"
    noise: float = 0.1
    seed: int = 0
    structure_seed: int = 0
    minority_offset: float = 1.5
    minority_scale: float = 1.0
    roi_strength: float = 2.0
    informative: int | None = None

    def validate(self) -> None:
        if self.n < 4:
            raise InvalidConfigError(f"n must be >= 4, got {self.n}")
        if self.d < 1:
            raise InvalidConfigError(f"d must be >= 1, got {self.d}")
        if self.outcome_model not in OUTCOME_MODELS:
            raise InvalidConfigError(f"unknown outcome_model {self.outcome_model!r}")
        if self.noise < 0:
            raise InvalidConfigError("noise must be non-negative")
        if self.minority_scale <= 0:
            raise InvalidConfigError("minority_scale must be positive")
        if self.informative is not None and not 1 <= self.informative <= self.d:
            raise InvalidConfigError("informative must lie in [1, d]")


@dataclass(frozen=True)
class ShiftSpec:
    kind: str = "none"
    magnitude: float = 0.0

    def __post_init__(self):
        if self.kind not in SHIFT_KINDS:
            raise InvalidConfigError(f"unknown shift kind {self.kind!r}")
        if self.magnitude < 0:
            raise InvalidConfigError("shift magnitude must be >= 0")


NO_SHIFT = ShiftSpec()


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True)
class _Surfaces:
    roi_w: np.ndarray
    roi_b: float
    cost_w: np.ndarray
    base_c_w: np.ndarray
    base_r_w: np.ndarray


def _surfaces(cfg: SyntheticConfig) -> _Surfaces:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.structure_seed, cfg.d, 7919]))
    d = cfg.d
    k = cfg.informative or d

    def unit():
        v = np.zeros(d)
        v[:k] = rng.standard_normal(k)
        return v / np.linalg.norm(v)

    roi_w = unit()
    # tilt the ROI direction toward the minority component so that component
    # reweighting changes the ROI mix
    roi_w[:k] += 0.5 / np.sqrt(k)
    roi_w = cfg.roi_strength * roi_w / np.linalg.norm(roi_w)
    return _Surfaces(
        roi_w=roi_w,
        roi_b=-0.5,
        cost_w=unit(),
        base_c_w=unit(),
        base_r_w=unit(),
    )


def ground_truth(x: np.ndarray, cfg: SyntheticConfig) -> GroundTruth:
    """Per-sample revenue/cost uplift implied by the generator's response surfaces."""
    s = _surfaces(cfg)
    roi = np.clip(_sigmoid(x @ s.roi_w + s.roi_b), ROI_MIN, ROI_MAX)
    tau_c = 0.1 + 0.4 * _sigmoid(x @ s.cost_w)
    return GroundTruth(tau_r=roi * tau_c, tau_c=tau_c, roi=roi)


def generate_synthetic(config: SyntheticConfig, shift: ShiftSpec = NO_SHIFT) -> tuple[RctDataset, GroundTruth]:
    """Draw an RCT sample.

    Features come from a two-component Gaussian mixture with weights
    (0.9, 0.1); the minority component is offset by ``minority_offset`` on
    every coordinate. Treatment is a fair coin independent of x.

    Shifts act on the features only, so Y|X is unchanged. ``mean_shift`` adds
    ``magnitude`` to every feature; ``mixture_reweight`` moves the minority
    weight from 0.1 toward 0.5 (reached at magnitude >= 1). The random draws
    are identical with and without a shift, so a shifted dataset is the same
    population of individuals with altered covariates.
    """
    config.validate()
    n, d = config.n, config.d
    rng = np.random.default_rng(config.seed)
    comp_u = rng.random(n)
    z = rng.standard_normal((n, d))
    t_u = rng.random(n)
    out_u = rng.random((n, 2))
    out_e = rng.standard_normal((n, 2))

    minority = 0.1
    if shift.kind == "mixture_reweight":
        minority = 0.1 + 0.4 * min(shift.magnitude, 1.0)
    in_minority = (comp_u < minority)[:, None]
    x = np.where(in_minority, z * config.minority_scale + config.minority_offset, z)
    if shift.kind == "mean_shift":
        x = x + shift.magnitude

    t = (t_u < 0.5).astype(np.int8)
    truth = ground_truth(x, config)
    s = _surfaces(config)
    base_c = 0.1 + 0.3 * _sigmoid(x @ s.base_c_w)
    base_r = 0.1 + 0.3 * _sigmoid(x @ s.base_r_w)
    mean_c = base_c + t * truth.tau_c
    mean_r = base_r + t * truth.tau_r
    if config.outcome_model == "bernoulli":
        y_c = (out_u[:, 0] < mean_c).astype(np.float64)
        y_r = (out_u[:, 1] < mean_r).astype(np.float64)
    else:
        y_c = mean_c + config.noise * out_e[:, 0]
        y_r = mean_r + config.noise * out_e[:, 1]
    return RctDataset(x, t, y_r, y_c), truth


def load_csv(path: str | os.PathLike, column_map: Mapping[str, object]) -> RctDataset:
    """Read a comma-separated RCT file with a header row.

    ``column_map`` has keys ``features`` (list of column names), ``treatment``,
    ``revenue`` and ``cost``.
    """
    features = list(column_map["features"])
    wanted = features + [column_map["treatment"], column_map["revenue"], column_map["cost"]]
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    for col in wanted:
        if col not in frame.columns:
            raise SchemaError(col)
    values = {}
    for col in dict.fromkeys(wanted):
        raw = frame[col]
        try:
            # numpy's string parsing is correctly rounded; pandas' fast path is not
            values[col] = raw.str.strip().to_numpy().astype(np.float64)
        except ValueError:
            bad = pd.to_numeric(raw.str.strip(), errors="coerce").isna().to_numpy()
            row = int(np.argmax(bad))
            raise ParseError(row, col, raw.iloc[row]) from None
    t = values[column_map["treatment"]]
    bad = ~np.isin(t, (0.0, 1.0))
    if bad.any():
        row = int(np.argmax(bad))
        raise ValidationError(f"row {row}: treatment value {t[row]!r} is not 0 or 1")
    x = np.column_stack([values[c] for c in features]) if features else np.empty((len(frame), 0))
    return RctDataset(x, t.astype(np.int8), values[column_map["revenue"]], values[column_map["cost"]])


def default_column_map(d: int) -> dict:
    return {"features": [f"x{i}" for i in range(d)], "treatment": "t", "revenue": "y_r", "cost": "y_c"}


def save_csv(ds: RctDataset, path: str | os.PathLike, column_map: Mapping[str, object] | None = None) -> None:
    cmap = column_map or default_column_map(ds.d)
    frame = pd.DataFrame(ds.x, columns=list(cmap["features"]))
    frame[cmap["treatment"]] = ds.t
    frame[cmap["revenue"]] = ds.y_r
    frame[cmap["cost"]] = ds.y_c
    frame.to_csv(path, index=False, float_format="%.17g")


def rescale_outcomes(ds: RctDataset, factor_r: float, factor_c: float) -> RctDataset:
    if not (factor_r > 0 and factor_c > 0):
        raise InvalidArgumentError(f"scale factors must be positive, got ({factor_r}, {factor_c})")
    return RctDataset(ds.x, ds.t, ds.y_r * factor_r, ds.y_c * factor_c)


def subsample(ds: RctDataset, rate: float, seed: int) -> RctDataset:
    """Keep each sample independently with probability ``rate``."""
    return ds.take(subsample_mask(ds.n, rate, seed))


def subsample_mask(n: int, rate: float, seed: int) -> np.ndarray:
    if not 0 < rate <= 1:
        raise InvalidArgumentError(f"rate must lie in (0, 1], got {rate}")
    return np.random.default_rng(seed).random(n) < rate


def split_indices(n: int, fractions: Sequence[float], seed: int) -> tuple[np.ndarray, ...]:
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise InvalidArgumentError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_cali = int(round(fractions[1] * n))
    return perm[:n_train], perm[n_train:n_train + n_cali], perm[n_train + n_cali:]


def split(ds: RctDataset, fractions: Sequence[float], seed: int) -> tuple[RctDataset, RctDataset, RctDataset]:
    """Seeded shuffle followed by a train/calibration/test partition."""
    return tuple(ds.take(idx) for idx in split_indices(ds.n, fractions, seed))


def diff_in_means(ds: RctDataset) -> tuple[float, float]:
    """Treated-minus-control mean of revenue and cost."""
    treated = ds.t == 1
    if treated.all() or not treated.any():
        raise DegenerateDatasetError(f"need both arms, got N1={ds.n1}, N0={ds.n0}")
    control = ~treated
    delta_r = ds.y_r[treated].mean() - ds.y_r[control].mean()
    delta_c = ds.y_c[treated].mean() - ds.y_c[control].mean()
    return float(delta_r), float(delta_c)
