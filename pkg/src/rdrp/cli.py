"""Command-line entry point: ``rdrp <subcommand> ...``.

Exit status is 0 on success, 1 when an experiment finished with failed cells
and 2 for invalid input of any kind.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from rdrp.allocation import AllocationInstance, brute_force_allocate, greedy_allocate
from rdrp.conformal import (
    BinarySearchConfig,
    ConformalCalibration,
    McConfig,
    find_roi_star,
    rdrp_calibrate,
    rdrp_infer,
)
from rdrp.dataset import (
    CRITEO_COLUMN_MAP,
    SHIFT_KINDS,
    ShiftSpec,
    SyntheticConfig,
    default_column_map,
    generate_synthetic,
    load_csv,
    save_csv,
)
from rdrp.errors import InvalidArgumentError, RdrpError, SchemaError
from rdrp.evaluation import DEFAULT_BUCKETS, aucc, cost_curve, empirical_coverage, write_curve_csv
from rdrp.experiment import ExperimentConfig, emit_report, run_experiment
from rdrp.model import TrainConfig, load_params, save_params, train

log = logging.getLogger("rdrp")


def _column_map(args, path) -> dict:
    if args.column_map:
        with open(args.column_map, encoding="utf-8") as fh:
            return json.load(fh)
    if args.columns == "criteo":
        return CRITEO_COLUMN_MAP
    header = pd.read_csv(path, nrows=0).columns
    d = sum(1 for c in header if c.startswith("x") and c[1:].isdigit())
    return default_column_map(d)


def _load(args, path):
    return load_csv(path, _column_map(args, path))


def _add_columns(p: argparse.ArgumentParser) -> None:
    p.add_argument("--columns", choices=("default", "criteo"), default="default",
                   help="column naming: x0..x{d-1},t,y_r,y_c or the Criteo uplift schema")
    p.add_argument("--column-map", help="JSON file with keys features, treatment, revenue, cost")


def _write_frame(frame: pd.DataFrame, path) -> None:
    frame.to_csv(path, index=False, float_format="%.17g")


# -- subcommands -----------------------------------------------------------


def cmd_gen(args) -> int:
    cfg = SyntheticConfig(n=args.n, d=args.d, outcome_model=args.outcome_model, noise=args.noise, seed=args.seed)
    ds, truth = generate_synthetic(cfg, ShiftSpec(args.shift, args.magnitude))
    save_csv(ds, args.out)
    if args.truth:
        _write_frame(pd.DataFrame({"tau_r": truth.tau_r, "tau_c": truth.tau_c, "roi": truth.roi}), args.truth)
    log.info("wrote %d rows to %s", ds.n, args.out)
    return 0


def cmd_train(args) -> int:
    ds = _load(args, args.data)
    cfg = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.learning_rate,
        momentum=args.momentum, seed=args.seed, objective=args.objective, hidden=args.hidden,
        target=args.target,
    )
    history: list = []
    params = train(ds, cfg, history=history)
    save_params(params, args.out)
    log.info("final epoch loss %.6f; weights in %s", history[-1], args.out)
    return 0


def cmd_calibrate(args) -> int:
    params = load_params(args.weights)
    ds = _load(args, args.data)
    cal = rdrp_calibrate(
        params, ds, alpha=args.alpha,
        mc=McConfig(passes=args.passes, retention=args.retention, seed=args.seed),
        bsearch=BinarySearchConfig(args.epsilon), include_identity=args.include_identity,
        clamp=args.clamp, buckets=args.buckets,
    )
    Path(args.out).write_text(cal.to_json() + "\n", encoding="utf-8")
    log.info("roi*=%.6g q_hat=%s form=%s", cal.roi_star, cal.q_hat, cal.form)
    return 0


def cmd_predict(args) -> int:
    params = load_params(args.weights)
    cal = ConformalCalibration.from_json(Path(args.calibration).read_text(encoding="utf-8"))
    ds = _load(args, args.data)
    pred = rdrp_infer(params, cal, ds.x)
    frame = pd.DataFrame({
        "index": np.arange(len(pred)), "roi_hat": pred.roi_hat, "r_hat": pred.r_hat,
        "lo": pred.lo, "hi": pred.hi, "roi_tilde": pred.roi_tilde,
    })
    if args.truth:
        truth = pd.read_csv(args.truth)
        if len(truth) != len(frame):
            raise InvalidArgumentError(f"{args.truth} has {len(truth)} rows, expected {len(frame)}")
        frame["tau_r"] = truth["tau_r"].to_numpy()
        frame["tau_c"] = truth["tau_c"].to_numpy()
    _write_frame(frame, args.out)
    return 0


def cmd_allocate(args) -> int:
    frame = pd.read_csv(args.predictions)
    for col in ("index", "tau_r", "tau_c"):
        if col not in frame.columns:
            raise SchemaError(col)
    tau_c = frame["tau_c"].to_numpy(dtype=np.float64)
    if (args.budget is None) == (args.budget_fraction is None):
        raise InvalidArgumentError("give exactly one of --budget and --budget-fraction")
    budget = args.budget if args.budget is not None else args.budget_fraction * float(tau_c.sum())
    inst = AllocationInstance(frame["tau_r"].to_numpy(dtype=np.float64), tau_c, budget)
    if args.brute_force:
        out = brute_force_allocate(inst)
    else:
        scores = None if args.score_column == "truth" else frame[args.score_column].to_numpy(dtype=np.float64)
        out = greedy_allocate(inst, scores)
    _write_frame(pd.DataFrame({"index": frame["index"], "z": out.z}), args.out)
    print(json.dumps({"budget": budget, "total_revenue": out.total_revenue, "total_cost": out.total_cost,
                      "treated": int(out.z.sum())}))
    return 0


def cmd_evaluate(args) -> int:
    ds = _load(args, args.data)
    frame = pd.read_csv(args.predictions)
    if args.score_column not in frame.columns:
        raise SchemaError(args.score_column)
    curve = cost_curve(frame[args.score_column].to_numpy(dtype=np.float64), ds, args.buckets)
    result = {"aucc": aucc(curve), "buckets": curve.buckets, "n": ds.n}
    if {"lo", "hi"} <= set(frame.columns):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            roi_star = find_roi_star(ds, BinarySearchConfig(args.epsilon), clamp=True)
        result["roi_star"] = roi_star
        result["coverage"] = empirical_coverage(frame["lo"], frame["hi"], roi_star)
    if args.curve:
        write_curve_csv(curve, args.curve)
    print(json.dumps(result))
    return 0


def cmd_experiment(args) -> int:
    cfg = ExperimentConfig.from_json_file(args.config)
    overrides = {}
    if args.seed:
        overrides["seeds"] = tuple(args.seed)
    if args.workers:
        overrides["workers"] = args.workers
    if args.out:
        overrides["output_dir"] = args.out
    if overrides:
        cfg = replace(cfg, **overrides)
    report = run_experiment(cfg)
    for path in emit_report(report, cfg.output_dir):
        log.info("wrote %s", path)
    for row in report.summary:
        mean = "failed" if row["aucc_mean"] is None else f"{row['aucc_mean']:.4f}"
        print(f"{row['setting']:5s} {row['method']:7s} AUCC {mean}")
    failed = [c for c in report.cells if c["status"] != "ok"]
    for c in failed:
        print(f"FAILED {c['setting']}/{c['method']}/seed {c['seed']}: {c['error']}", file=sys.stderr)
    return 1 if failed else 0


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rdrp", description="Robust direct ROI prediction toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic RCT dataset")
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--d", type=int, default=12)
    p.add_argument("--outcome-model", choices=("bernoulli", "gaussian"), default="bernoulli")
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--shift", choices=SHIFT_KINDS, default="none")
    p.add_argument("--magnitude", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--truth", help="also write per-row tau_r, tau_c, roi")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a DRP network or a TPM-SL regressor")
    p.add_argument("--data", required=True)
    _add_columns(p)
    p.add_argument("--objective", choices=("drp", "mse_regression"), default="drp")
    p.add_argument("--target", choices=("y_r", "y_c"), default="y_c", help="regression target for mse_regression")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--learning-rate", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="fit roi*, q_hat and the calibration form on a calibration set")
    p.add_argument("--weights", required=True)
    p.add_argument("--data", required=True)
    _add_columns(p)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--passes", type=int, default=50)
    p.add_argument("--retention", type=float, default=0.9)
    p.add_argument("--epsilon", type=float, default=1e-3)
    p.add_argument("--buckets", type=int, default=DEFAULT_BUCKETS)
    p.add_argument("--include-identity", action="store_true", help="add the uncalibrated score as a candidate form")
    p.add_argument("--clamp", action="store_true", help="clamp an out-of-range roi* instead of failing")
    p.add_argument("--seed", type=int, default=0, help="MC dropout seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("predict", help="score rows with a calibrated network")
    p.add_argument("--weights", required=True)
    p.add_argument("--calibration", required=True)
    p.add_argument("--data", required=True)
    _add_columns(p)
    p.add_argument("--truth", help="ground-truth CSV from gen; adds tau_r and tau_c columns")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("allocate", help="greedy budgeted treatment assignment")
    p.add_argument("--predictions", required=True, help="CSV with index, tau_r, tau_c and a score column")
    p.add_argument("--score-column", default="roi_tilde", help="ranking column, or 'truth' for tau_r/tau_c")
    p.add_argument("--budget", type=float)
    p.add_argument("--budget-fraction", type=float, help="budget as a fraction of total tau_c")
    p.add_argument("--brute-force", action="store_true", help="exact search (at most 22 rows)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("evaluate", help="AUCC and interval coverage of a predictions file")
    p.add_argument("--data", required=True)
    _add_columns(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--score-column", default="roi_tilde")
    p.add_argument("--buckets", type=int, default=DEFAULT_BUCKETS)
    p.add_argument("--epsilon", type=float, default=1e-3)
    p.add_argument("--curve", help="write the cost curve CSV here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="run the four-setting benchmark from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, action="append", help="override the config seeds (repeatable)")
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="override output_dir")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (RdrpError, OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
