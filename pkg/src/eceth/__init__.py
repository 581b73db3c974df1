"""Estimate how well CATE predictions are calibrated.

The target is the mean squared gap between each prediction and the average
treatment effect among units sharing that prediction. Doubly robust scores
stand in for the unobserved effects, and a leave-one-out binned estimator
removes the upward bias of the naive plug-in.
"""

__version__ = "0.1.0"

from .calibration import BinPartition, CalibrationCurve, calibration_curve, make_bins, merge_singletons, plot_table
from .data import ColumnSpec, Dataset, Observation, load_csv, split_folds, write_csv
from .errors import EcethError, EstimationError, InputError
from .estimator import EcethEstimate, default_bin_count, theta_plugin, theta_robust
from .inference import BootstrapResult, TestResult, bootstrap, test_miscalibration
from .nuisance import CrossFitPlan, LearnerSpec, cross_fit_scores, fit_outcome, fit_propensity
from .pipeline import PipelineConfig, PipelineResult, run_pipeline
from .scores import ScoreSet, aipw_score, build_scores, ipw_score
from .simbench import SimResult, SimScenario, generate_observational, generate_rct, run_scenario, theta_true

__all__ = [
    "BinPartition", "BootstrapResult", "CalibrationCurve", "ColumnSpec", "CrossFitPlan", "Dataset",
    "EcethError", "EcethEstimate", "EstimationError", "InputError", "LearnerSpec", "Observation",
    "PipelineConfig", "PipelineResult", "ScoreSet", "SimResult", "SimScenario", "TestResult",
    "aipw_score", "bootstrap", "build_scores", "calibration_curve", "cross_fit_scores", "default_bin_count",
    "fit_outcome", "fit_propensity", "generate_observational", "generate_rct", "ipw_score", "load_csv",
    "make_bins", "merge_singletons", "plot_table", "run_pipeline", "run_scenario", "split_folds",
    "test_miscalibration", "theta_plugin", "theta_robust", "theta_true", "write_csv",
]
