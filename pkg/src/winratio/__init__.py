"""Win ratio estimation for a censored terminal endpoint followed by a possibly-missing second endpoint."""
from .data import (AnalysisDataset, ScoreObservation, StudyConfig, SubjectRecord,
                   apply_sensitivity_transform, read_csv, to_score_observations, validate_dataset)
from .estimators import WinLossTally, WrEstimate, pocock_estimate, win_probabilities, wr_sscore
from .survfit import StepCdf, cdf_eval, km_fit, pooled_grid

__all__ = [
    "AnalysisDataset", "ScoreObservation", "StudyConfig", "SubjectRecord",
    "apply_sensitivity_transform", "read_csv", "to_score_observations", "validate_dataset",
    "WinLossTally", "WrEstimate", "pocock_estimate", "win_probabilities", "wr_sscore",
    "StepCdf", "cdf_eval", "km_fit", "pooled_grid",
]

__version__ = "0.1.0"
