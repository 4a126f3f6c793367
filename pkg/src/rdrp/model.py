"""One-hidden-layer network for direct ROI prediction.

The network maps features to a score ``s``; the ROI estimate is
``sigmoid(s)``. The DRP objective, its analytic gradient and a mini-batch
SGD trainer live here, together with an MSE regression mode used by the
two-model S-learner baseline.
"""

from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass
from typing import Callable

import numpy as np

from rdrp.dataset import RctDataset
from rdrp.errors import (
    CorruptionError,
    DegenerateDatasetError,
    FormatError,
    InvalidConfigError,
    ShapeError,
)

log = logging.getLogger(__name__)

H_MIN, H_MAX = 10, 100
ROI_EPS = 1e-12
# logit(1 - ROI_EPS); clamping s here is the same as clamping roi to [eps, 1 - eps]
S_CLAMP = float(np.log((1.0 - ROI_EPS) / ROI_EPS))
UPLIFT_FLOOR = 1e-6

MAGIC = b"RDRP"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True, eq=False)
class MlpParams:
    w1: np.ndarray  # (H, d)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (H,)
    b2: float

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def d(self) -> int:
        return self.w1.shape[1]

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.w1, self.b1, self.w2, np.array([self.b2])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_flat(cls, vec: np.ndarray, d: int, hidden: int) -> MlpParams:
        vec = np.asarray(vec, dtype=np.float64)
        i = hidden * d
        return cls(
            w1=vec[:i].reshape(hidden, d).copy(),
            b1=vec[i:i + hidden].copy(),
            w2=vec[i + hidden:i + 2 * hidden].copy(),
            b2=float(vec[i + 2 * hidden]),
        )

    def equals(self, other: MlpParams) -> bool:
        return self.w1.shape == other.w1.shape and np.array_equal(self.flat(), other.flat())


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 256
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    objective: str = "drp"
    hidden: int = 32
    target: str = "y_c"  # regression target for the mse objective

    def validate(self) -> None:
        if self.epochs < 1:
            raise InvalidConfigError("epochs must be >= 1")
        if self.batch_size < 2:
            raise InvalidConfigError("batch_size must be >= 2")
        if not self.learning_rate > 0:
            raise InvalidConfigError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise InvalidConfigError("momentum must lie in [0, 1)")
        if self.objective not in ("drp", "mse_regression"):
            raise InvalidConfigError(f"unknown objective {self.objective!r}")
        if self.target not in ("y_r", "y_c"):
            raise InvalidConfigError(f"unknown regression target {self.target!r}")
        _check_hidden(self.hidden)


@dataclass(frozen=True)
class Dropout:
    """Inference-time dropout: keep each hidden unit with probability ``p``."""

    p: float
    rng: np.random.Generator


def _check_hidden(hidden: int) -> None:
    if not H_MIN <= hidden <= H_MAX:
        raise InvalidConfigError(f"hidden width must lie in [{H_MIN}, {H_MAX}], got {hidden}")


def init_params(d: int, hidden: int, seed: int) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    if d < 1:
        raise InvalidConfigError("d must be >= 1")
    _check_hidden(hidden)
    rng = np.random.default_rng(seed)
    lim1 = np.sqrt(6.0 / (d + hidden))
    lim2 = np.sqrt(6.0 / (hidden + 1))
    return MlpParams(
        w1=rng.uniform(-lim1, lim1, size=(hidden, d)),
        b1=np.zeros(hidden),
        w2=rng.uniform(-lim2, lim2, size=hidden),
        b2=0.0,
    )


def sigmoid(s):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(s, dtype=np.float64)))


def _as_matrix(params: MlpParams, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.d:
        raise ShapeError(f"expected {params.d} features, got shape {x.shape}")
    return x, single


def forward(params: MlpParams, x, mode: Dropout | None = None):
    """Score ``s`` for one feature vector or a matrix of rows.

    With ``mode=None`` the full network is used. With a :class:`Dropout` mode
    each hidden activation is zeroed with probability ``1 - p`` and survivors
    are scaled by ``1 / p``.
    """
    x, single = _as_matrix(params, x)
    h = np.maximum(x @ params.w1.T + params.b1, 0.0)
    if mode is not None:
        if not 0 < mode.p <= 1:
            raise InvalidConfigError(f"retention must lie in (0, 1], got {mode.p}")
        if mode.p < 1:
            h = h * (mode.rng.random(h.shape) < mode.p) / mode.p
    s = h @ params.w2 + params.b2
    return float(s[0]) if single else s


def clamp_roi(roi):
    return np.clip(roi, ROI_EPS, 1.0 - ROI_EPS)


def predict_roi(params: MlpParams, x):
    s = forward(params, x)
    out = clamp_roi(sigmoid(s))
    return float(out) if np.ndim(out) == 0 else out


# -- DRP objective ---------------------------------------------------------


def _arm_weights(t: np.ndarray) -> np.ndarray:
    """+1/N1 for treated, -1/N0 for control. Raises on a single-arm batch."""
    t = np.asarray(t)
    n1 = int((t == 1).sum())
    n0 = t.size - n1
    if n1 == 0 or n0 == 0:
        raise DegenerateDatasetError(f"DRP loss needs both arms, got n1={n1}, n0={n0}")
    return np.where(t == 1, 1.0 / n1, -1.0 / n0)


def drp_loss_from_scores(s, t, y_r, y_c) -> float:
    """DRP loss for per-sample scores ``s``.

    Per-sample term: y_r * ln(roi / (1 - roi)) + y_c * ln(1 - roi), averaged
    within each arm; the loss is minus (treated mean - control mean).
    """
    w = _arm_weights(t)
    s = np.clip(np.asarray(s, dtype=np.float64), -S_CLAMP, S_CLAMP)
    log_odds = s
    log_one_minus = -np.logaddexp(0.0, s)
    per_sample = np.asarray(y_r) * log_odds + np.asarray(y_c) * log_one_minus
    return float(-(w @ per_sample))


def drp_score_grad(s, t, y_r, y_c) -> np.ndarray:
    """dL/ds_i = -(y_r - y_c * roi_i) / N1 for treated, +(...) / N0 for control."""
    w = _arm_weights(t)
    roi = clamp_roi(sigmoid(s))
    return -w * (np.asarray(y_r) - np.asarray(y_c) * roi)


def drp_loss(params: MlpParams, batch: RctDataset) -> float:
    return drp_loss_from_scores(forward(params, batch.x), batch.t, batch.y_r, batch.y_c)


def _backprop(params: MlpParams, x: np.ndarray, dl_ds: np.ndarray) -> MlpParams:
    pre = x @ params.w1.T + params.b1
    h = np.maximum(pre, 0.0)
    dh = np.outer(dl_ds, params.w2) * (pre > 0)
    return MlpParams(w1=dh.T @ x, b1=dh.sum(axis=0), w2=h.T @ dl_ds, b2=float(dl_ds.sum()))


def drp_loss_grad(params: MlpParams, batch: RctDataset) -> MlpParams:
    """Analytic gradient of :func:`drp_loss`, shaped like the parameters."""
    s = forward(params, batch.x)
    return _backprop(params, batch.x, drp_score_grad(s, batch.t, batch.y_r, batch.y_c))


def mse_loss(params: MlpParams, x: np.ndarray, y: np.ndarray) -> float:
    r = forward(params, x) - y
    return float(np.mean(r * r))


def mse_loss_grad(params: MlpParams, x: np.ndarray, y: np.ndarray) -> MlpParams:
    r = forward(params, x) - y
    return _backprop(params, x, 2.0 * r / r.size)


# -- training --------------------------------------------------------------


def with_treatment(x: np.ndarray, t) -> np.ndarray:
    """Append the treatment indicator as the last feature column."""
    x = np.asarray(x, dtype=np.float64)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
    return np.column_stack([x, t])


def _stratified_batches(t: np.ndarray, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    treated = np.flatnonzero(t == 1)
    control = np.flatnonzero(t == 0)
    n_batches = max(1, min(int(np.ceil(t.size / batch_size)), treated.size, control.size))
    parts_t = np.array_split(rng.permutation(treated), n_batches)
    parts_c = np.array_split(rng.permutation(control), n_batches)
    return [np.concatenate([a, b]) for a, b in zip(parts_t, parts_c)]


def _plain_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def train(
    ds: RctDataset,
    config: TrainConfig,
    history: list | None = None,
    on_epoch: Callable[[int, float], None] | None = None,
) -> MlpParams:
    """Mini-batch SGD with momentum.

    For the ``drp`` objective every batch holds both arms. For
    ``mse_regression`` the network regresses ``config.target`` on the
    features with the treatment flag appended. Mean batch loss per epoch is
    logged and, if given, appended to ``history``.
    """
    config.validate()
    if ds.n == 0:
        raise DegenerateDatasetError("cannot train on an empty dataset")
    if config.objective == "drp":
        if ds.n1 == 0 or ds.n0 == 0:
            raise DegenerateDatasetError(f"DRP training needs both arms, got N1={ds.n1}, N0={ds.n0}")
        x = ds.x
    else:
        x = with_treatment(ds.x, ds.t)
        target = ds.y_r if config.target == "y_r" else ds.y_c

    seeds = np.random.SeedSequence(config.seed).spawn(2)
    params = init_params(x.shape[1], config.hidden, int(seeds[0].generate_state(1)[0]))
    rng = np.random.default_rng(seeds[1])
    theta = params.flat()
    velocity = np.zeros_like(theta)
    d, hidden = x.shape[1], config.hidden

    for epoch in range(config.epochs):
        if config.objective == "drp":
            batches = _stratified_batches(ds.t, config.batch_size, rng)
        else:
            batches = _plain_batches(ds.n, config.batch_size, rng)
        total = 0.0
        for idx in batches:
            params = MlpParams.from_flat(theta, d, hidden)
            xb = x[idx]
            if config.objective == "drp":
                s = forward(params, xb)
                tb, yr, yc = ds.t[idx], ds.y_r[idx], ds.y_c[idx]
                total += drp_loss_from_scores(s, tb, yr, yc)
                grad = _backprop(params, xb, drp_score_grad(s, tb, yr, yc))
            else:
                yb = target[idx]
                r = forward(params, xb) - yb
                total += float(np.mean(r * r))
                grad = _backprop(params, xb, 2.0 * r / r.size)
            velocity = config.momentum * velocity - config.learning_rate * grad.flat()
            theta = theta + velocity
        mean_loss = total / len(batches)
        log.debug("epoch %d/%d mean loss %.6f", epoch + 1, config.epochs, mean_loss)
        if history is not None:
            history.append(mean_loss)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss)
    return MlpParams.from_flat(theta, d, hidden)


def tpm_sl_predict(model_r: MlpParams, model_c: MlpParams, x):
    """Two-model S-learner ROI: revenue uplift over cost uplift.

    Both regressors take the treatment flag as their last input. Cost uplifts
    below 1e-6 are floored.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    up_r = forward(model_r, with_treatment(x2, 1)) - forward(model_r, with_treatment(x2, 0))
    up_c = forward(model_c, with_treatment(x2, 1)) - forward(model_c, with_treatment(x2, 0))
    out = up_r / np.maximum(up_c, UPLIFT_FLOOR)
    return float(out[0]) if single else out


# -- persistence -----------------------------------------------------------


def save_params(params: MlpParams, path: str | os.PathLike) -> None:
    """Write ``RDRP`` magic, version, d, H, then w1, b1, w2, b2 as little-endian f64."""
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, params.d, params.hidden)
    body = params.flat().astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header + body)


def load_params(path: str | os.PathLike) -> MlpParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic bytes")
    if len(blob) < _HEADER.size:
        raise CorruptionError(f"{path}: truncated header")
    _, version, d, hidden = _HEADER.unpack_from(blob)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    if d < 1 or not H_MIN <= hidden <= H_MAX:
        raise CorruptionError(f"{path}: implausible dimensions d={d}, H={hidden}")
    n_values = hidden * d + 2 * hidden + 1
    body = blob[_HEADER.size:]
    if len(body) != 8 * n_values:
        raise CorruptionError(f"{path}: expected {8 * n_values} payload bytes for d={d}, H={hidden}, got {len(body)}")
    vec = np.frombuffer(body, dtype="<f8").astype(np.float64)
    if not np.isfinite(vec).all():
        raise CorruptionError(f"{path}: non-finite weights")
    return MlpParams.from_flat(vec, d, hidden)
