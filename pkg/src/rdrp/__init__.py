"""Direct ROI prediction with conformal robustification for budgeted treatment assignment."""

from rdrp.allocation import AllocationInstance, brute_force_allocate, greedy_allocate
from rdrp.conformal import (
    BinarySearchConfig,
    ConformalCalibration,
    McConfig,
    find_roi_star,
    rdrp_calibrate,
    rdrp_infer,
    rdrp_predict,
)
from rdrp.dataset import RctDataset, ShiftSpec, SyntheticConfig, generate_synthetic, load_csv
from rdrp.evaluation import aucc, cost_curve, empirical_coverage
from rdrp.experiment import ExperimentConfig, emit_report, run_experiment
from rdrp.model import MlpParams, TrainConfig, predict_roi, train

__version__ = "0.1.0"

__all__ = [
    "AllocationInstance",
    "BinarySearchConfig",
    "ConformalCalibration",
    "ExperimentConfig",
    "McConfig",
    "MlpParams",
    "RctDataset",
    "ShiftSpec",
    "SyntheticConfig",
    "TrainConfig",
    "aucc",
    "brute_force_allocate",
    "cost_curve",
    "emit_report",
    "empirical_coverage",
    "find_roi_star",
    "generate_synthetic",
    "greedy_allocate",
    "load_csv",
    "predict_roi",
    "rdrp_calibrate",
    "rdrp_infer",
    "rdrp_predict",
    "run_experiment",
    "train",
]
