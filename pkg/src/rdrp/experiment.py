"""Four-setting benchmark: sufficient/insufficient training data crossed with
no shift/covariate shift in the calibration and test samples.

Per seed, one sufficient population is drawn and split 0.7/0.15/0.15. The
insufficient training set is a 0.15-rate subsample of the sufficient one. The
shifted variant is generated from the same seed with a :class:`ShiftSpec`, so
treatment draws and outcome noise line up row for row and only the features
(and hence the outcomes through Y|X) differ.
"""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
import time
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import pandas as pd

from rdrp.allocation import AllocationInstance, greedy_allocate
from rdrp.conformal import BinarySearchConfig, McConfig, find_roi_star, rdrp_calibrate, rdrp_infer
from rdrp.dataset import NO_SHIFT, ShiftSpec, SyntheticConfig, generate_synthetic, split_indices, subsample
from rdrp.errors import InvalidConfigError, OutputError
from rdrp.evaluation import CostCurve, aucc, cost_curve, empirical_coverage, write_curve_csv
from rdrp.model import TrainConfig, predict_roi, tpm_sl_predict, train

log = logging.getLogger(__name__)

SETTINGS = ("SuNo", "SuCo", "InNo", "InCo")
METHODS = ("random", "tpm_sl", "drp", "rdrp")
CONFIG_VERSION = 1

DEFAULTS = {
    "version": CONFIG_VERSION,
    "generator": {"n": 100000, "d": 12, "outcome_model": "bernoulli", "noise": 0.1},
    "shift": {"kind": "mixture_reweight", "magnitude": 1.0},
    "insufficient_rate": 0.15,
    "split": [0.7, 0.15, 0.15],
    "settings": list(SETTINGS),
    "methods": list(METHODS),
    "seeds": [0, 1, 2, 3, 4],
    "train": {"epochs": 20, "batch_size": 256, "learning_rate": 0.01, "momentum": 0.9, "hidden": 32},
    "alpha": 0.1,
    "mc": {"passes": 50, "retention": 0.9},
    "epsilon": 1e-3,
    "include_identity": False,
    "budgets": [0.1, 0.2, 0.3, 0.5],
    "buckets": 100,
    "output_dir": "results",
    "workers": 1,
}


def load_schema() -> dict:
    text = resources.files("rdrp").joinpath("experiment.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated benchmark configuration; see ``experiment.schema.json``."""

    generator: SyntheticConfig = SyntheticConfig(n=100000)
    shift: ShiftSpec = ShiftSpec("mixture_reweight", 1.0)
    insufficient_rate: float = 0.15
    split: tuple = (0.7, 0.15, 0.15)
    settings: tuple = SETTINGS
    methods: tuple = METHODS
    seeds: tuple = (0, 1, 2, 3, 4)
    train: TrainConfig = TrainConfig()
    alpha: float = 0.1
    mc_passes: int = 50
    mc_retention: float = 0.9
    epsilon: float = 1e-3
    include_identity: bool = False
    budgets: tuple = (0.1, 0.2, 0.3, 0.5)
    buckets: int = 100
    output_dir: str = "results"
    workers: int = 1

    def __post_init__(self):
        if not self.settings or not self.methods or not self.seeds:
            raise InvalidConfigError("settings, methods and seeds must be non-empty")
        for s in self.settings:
            if s not in SETTINGS:
                raise InvalidConfigError(f"unknown setting {s!r}")
        for m in self.methods:
            if m not in METHODS:
                raise InvalidConfigError(f"unknown method {m!r}")
        self.generator.validate()
        self.train.validate()
        if abs(sum(self.split) - 1.0) > 1e-9 or len(self.split) != 3:
            raise InvalidConfigError(f"split must be three fractions summing to 1, got {self.split}")

    @classmethod
    def from_dict(cls, doc: dict) -> ExperimentConfig:
        try:
            jsonschema.validate(doc, load_schema())
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise InvalidConfigError(f"config {where}: {exc.message}") from None
        merged = {k: (dict(v) if isinstance(v, dict) else v) for k, v in DEFAULTS.items()}
        for key, value in doc.items():
            if isinstance(merged.get(key), dict) and key != "shift":
                merged[key].update(value)
            else:
                merged[key] = value
        shift = merged["shift"]
        return cls(
            generator=SyntheticConfig(**merged["generator"]),
            shift=ShiftSpec(shift["kind"], float(shift.get("magnitude", 0.0))),
            insufficient_rate=float(merged["insufficient_rate"]),
            split=tuple(float(f) for f in merged["split"]),
            settings=tuple(merged["settings"]),
            methods=tuple(merged["methods"]),
            seeds=tuple(int(s) for s in merged["seeds"]),
            train=TrainConfig(**merged["train"]),
            alpha=float(merged["alpha"]),
            mc_passes=int(merged["mc"]["passes"]),
            mc_retention=float(merged["mc"]["retention"]),
            epsilon=float(merged["epsilon"]),
            include_identity=bool(merged["include_identity"]),
            budgets=tuple(float(b) for b in merged["budgets"]),
            buckets=int(merged["buckets"]),
            output_dir=merged["output_dir"],
            workers=int(merged["workers"]),
        )

    @classmethod
    def from_json_file(cls, path) -> ExperimentConfig:
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InvalidConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        g = self.generator
        t = self.train
        return {
            "version": CONFIG_VERSION,
            "generator": {
                "n": g.n, "d": g.d, "outcome_model": g.outcome_model, "noise": g.noise,
                "structure_seed": g.structure_seed, "minority_offset": g.minority_offset,
                "minority_scale": g.minority_scale, "roi_strength": g.roi_strength,
                "informative": g.informative,
            },
            "shift": {"kind": self.shift.kind, "magnitude": self.shift.magnitude},
            "insufficient_rate": self.insufficient_rate,
            "split": list(self.split),
            "settings": list(self.settings),
            "methods": list(self.methods),
            "seeds": list(self.seeds),
            "train": {
                "epochs": t.epochs, "batch_size": t.batch_size, "learning_rate": t.learning_rate,
                "momentum": t.momentum, "hidden": t.hidden,
            },
            "alpha": self.alpha,
            "mc": {"passes": self.mc_passes, "retention": self.mc_retention},
            "epsilon": self.epsilon,
            "include_identity": self.include_identity,
            "budgets": list(self.budgets),
            "buckets": self.buckets,
            "output_dir": self.output_dir,
            "workers": self.workers,
        }


@dataclass
class Report:
    """Per-cell results plus seed aggregates.

    ``cells`` has one entry per (setting, method, seed) in config order; a
    failed cell carries ``status == "failed"`` and an ``error`` string.
    ``timings`` is kept apart because it is the only non-deterministic part.
    """

    config: ExperimentConfig
    cells: list = field(default_factory=list)
    summary: list = field(default_factory=list)
    timings: list = field(default_factory=list)
    curves: dict = field(default_factory=dict)
    calibrations: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return any(c["status"] != "ok" for c in self.cells)

    def mean_aucc(self, setting: str, method: str) -> float:
        for row in self.summary:
            if row["setting"] == setting and row["method"] == method:
                return row["aucc_mean"]
        raise KeyError((setting, method))

    def metrics(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "cells": self.cells,
            "summary": self.summary,
            "timings": self.timings,
        }


def derive_seed(seed: int, *names: str) -> int:
    """Stable child seed for a named stream of a run seed."""
    keys = [seed] + [zlib.crc32(n.encode("utf-8")) for n in names]
    return int(np.random.SeedSequence(keys).generate_state(1)[0])


@dataclass
class _SeedData:
    train: dict  # "Su"/"In" -> RctDataset
    cali: dict  # "No"/"Co" -> RctDataset
    test: dict
    test_truth: dict


def _prepare(config: ExperimentConfig, seed: int) -> _SeedData:
    gen = replace(config.generator, seed=derive_seed(seed, "data"))
    base, gt = generate_synthetic(gen, NO_SHIFT)
    shifted, gt_shift = generate_synthetic(gen, config.shift)
    itr, ical, ite = split_indices(base.n, config.split, derive_seed(seed, "split"))
    su = base.take(itr)
    train_sets = {"Su": su, "In": subsample(su, config.insufficient_rate, derive_seed(seed, "subsample"))}
    return _SeedData(
        train=train_sets,
        cali={"No": base.take(ical), "Co": shifted.take(ical)},
        test={"No": base.take(ite), "Co": shifted.take(ite)},
        test_truth={"No": gt.take(ite), "Co": gt_shift.take(ite)},
    )


def _train_config(config: ExperimentConfig, seed: int, role: str, **overrides) -> TrainConfig:
    return replace(config.train, seed=derive_seed(seed, "train", role), **overrides)


def _greedy_revenues(config, scores, truth) -> dict:
    instance_budget = float(np.sum(truth.tau_c))
    out = {}
    for frac in config.budgets:
        inst = AllocationInstance(truth.tau_r, truth.tau_c, frac * instance_budget)
        out[f"{frac:g}"] = greedy_allocate(inst, scores).total_revenue
    return out


def _run_seed(config: ExperimentConfig, seed: int) -> list[dict]:
    """All cells of one seed; trained models are shared across settings that use the same training set."""
    t0 = time.perf_counter()
    data = _prepare(config, seed)
    prep_time = time.perf_counter() - t0
    models: dict = {}
    results = []

    def model(kind: str, pool: str):
        key = (kind, pool)
        if key not in models:
            start = time.perf_counter()
            try:
                ds = data.train[pool]
                if kind == "drp":
                    value = train(ds, _train_config(config, seed, f"drp-{pool}"))
                else:
                    value = (
                        train(ds, _train_config(config, seed, f"tpm_r-{pool}", objective="mse_regression", target="y_r")),
                        train(ds, _train_config(config, seed, f"tpm_c-{pool}", objective="mse_regression", target="y_c")),
                    )
                models[key] = (value, None, time.perf_counter() - start)
            except Exception as exc:  # noqa: BLE001 - recorded per cell
                models[key] = (None, exc, time.perf_counter() - start)
        value, exc, elapsed = models[key]
        if exc is not None:
            raise exc
        return value, elapsed

    for setting in config.settings:
        pool, shift = setting[:2], setting[2:]
        cali, test, truth = data.cali[shift], data.test[shift], data.test_truth[shift]
        for method in config.methods:
            cell = {"setting": setting, "method": method, "seed": seed}
            timing = {"setting": setting, "method": method, "seed": seed, "prepare_s": prep_time}
            extra = {}
            try:
                if method == "random":
                    rng = np.random.default_rng(derive_seed(seed, "random", setting))
                    scores = rng.random(test.n)
                elif method == "tpm_sl":
                    (m_r, m_c), timing["train_s"] = model("tpm_sl", pool)
                    scores = tpm_sl_predict(m_r, m_c, test.x)
                elif method == "drp":
                    params, timing["train_s"] = model("drp", pool)
                    scores = predict_roi(params, test.x)
                else:
                    params, timing["train_s"] = model("drp", pool)
                    start = time.perf_counter()
                    mc = McConfig(config.mc_passes, config.mc_retention, derive_seed(seed, "mc", setting))
                    cal = rdrp_calibrate(
                        params, cali, config.alpha, mc, BinarySearchConfig(config.epsilon),
                        include_identity=config.include_identity, clamp=True, buckets=config.buckets,
                    )
                    timing["calibrate_s"] = time.perf_counter() - start
                    start = time.perf_counter()
                    pred = rdrp_infer(params, cal, test.x)
                    timing["infer_s"] = time.perf_counter() - start
                    scores = pred.roi_tilde
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore", RuntimeWarning)
                        roi_star_test = find_roi_star(test, BinarySearchConfig(config.epsilon), clamp=True)
                    extra = {
                        "coverage": empirical_coverage(pred.lo, pred.hi, roi_star_test),
                        "form": cal.form,
                        "q_hat": None if math.isinf(cal.q_hat) else cal.q_hat,
                        "roi_star_cali": cal.roi_star,
                        "roi_star_test": roi_star_test,
                    }
                    cell["calibration"] = cal.to_dict()
                start = time.perf_counter()
                curve = cost_curve(scores, test, config.buckets)
                cell.update(status="ok", aucc=aucc(curve), **extra)
                cell["greedy_revenue"] = _greedy_revenues(config, scores, truth)
                cell["curve"] = {"cost": curve.cost.tolist(), "value": curve.value.tolist()}
                timing["evaluate_s"] = time.perf_counter() - start
            except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the run
                log.warning("cell %s/%s/seed %d failed: %s", setting, method, seed, exc)
                cell.update(status="failed", error=f"{type(exc).__name__}: {exc}")
            results.append((cell, timing))
    return results


def _aggregate(config: ExperimentConfig, cells: list[dict]) -> list[dict]:
    rows = []
    for setting in config.settings:
        for method in config.methods:
            ok = [c for c in cells if c["setting"] == setting and c["method"] == method and c["status"] == "ok"]
            row = {"setting": setting, "method": method, "n_ok": len(ok)}
            values = np.array([c["aucc"] for c in ok])
            row["aucc_mean"] = float(values.mean()) if ok else None
            row["aucc_std"] = float(values.std(ddof=1)) if len(ok) > 1 else (0.0 if ok else None)
            if method == "rdrp":
                cov = np.array([c["coverage"] for c in ok])
                row["coverage_mean"] = float(cov.mean()) if ok else None
                row["coverage_std"] = float(cov.std(ddof=1)) if len(ok) > 1 else (0.0 if ok else None)
            for frac in config.budgets:
                key = f"{frac:g}"
                rev = np.array([c["greedy_revenue"][key] for c in ok])
                row[f"revenue_{key}_mean"] = float(rev.mean()) if ok else None
            rows.append(row)
    return rows


def run_experiment(config: ExperimentConfig) -> Report:
    """Run every (setting, method, seed) cell and aggregate across seeds."""
    seeds = list(config.seeds)
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            per_seed = list(pool.map(_run_seed, [config] * len(seeds), seeds))
    else:
        per_seed = [_run_seed(config, s) for s in seeds]

    report = Report(config=config)
    order = {(s, m): i for i, (s, m) in enumerate((s, m) for s in config.settings for m in config.methods)}
    flat = [(cell, timing, k) for k, results in enumerate(per_seed) for cell, timing in results]
    flat.sort(key=lambda item: (order[(item[0]["setting"], item[0]["method"])], item[2]))
    for cell, timing, _ in flat:
        curve = cell.pop("curve", None)
        cal = cell.pop("calibration", None)
        key = (cell["setting"], cell["method"])
        if curve is not None and key not in report.curves:
            report.curves[key] = CostCurve(np.asarray(curve["cost"]), np.asarray(curve["value"]), config.buckets)
        if cal is not None:
            report.calibrations.setdefault(cell["setting"], {})[str(cell["seed"])] = cal
        report.cells.append(cell)
        report.timings.append(timing)
    report.summary = _aggregate(config, report.cells)
    return report


# -- output ----------------------------------------------------------------


def _atomic_write(path: Path, writer) -> None:
    """Write through a temp file in the same directory, then rename over ``path``."""
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    except OSError as exc:
        raise OutputError(path, exc.strerror or exc) from exc
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            writer(fh)
        os.replace(tmp, path)
    except OSError as exc:
        Path(tmp).unlink(missing_ok=True)
        raise OutputError(path, exc.strerror or exc) from exc


def _json_writer(doc):
    def write(fh):
        json.dump(doc, fh, indent=2, allow_nan=False)
        fh.write("\n")
    return write


def metrics_without_timings(path) -> bytes:
    """metrics.json with the timings section dropped, re-serialized canonically."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    doc.pop("timings", None)
    return json.dumps(doc, indent=2, sort_keys=True).encode("utf-8")


def emit_report(report: Report, out_dir) -> list[Path]:
    """Write metrics.json, summary.csv, cost curves and calibration artifacts; returns the paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(out, exc.strerror or exc) from exc
    written = []

    def emit(name, writer):
        path = out / name
        _atomic_write(path, writer)
        written.append(path)

    emit("metrics.json", _json_writer(report.metrics()))
    frame = pd.DataFrame(report.summary)
    emit("summary.csv", lambda fh: frame.to_csv(fh, index=False, float_format="%.10g"))
    for (setting, method), curve in report.curves.items():
        emit(f"cost_curve_{setting}_{method}.csv", lambda fh, c=curve: write_curve_csv(c, fh))
    for setting, cals in report.calibrations.items():
        emit(f"calibration_{setting}.json", _json_writer(cals))
    return written
