"""Canonical correlation regression: spectrally regularized 2SLS for noisy,
high-dimensional instrumental-variable data."""

from .datamodel import Dataset, DgpConfig, GroundTruth, Regime, generate_dataset, load_dataset, save_dataset
from .diagnostics import (
    classify_regime,
    error_decomposition,
    key_quantities,
    minimax_lower_bound,
    recommend_estimator,
    wedin_check,
)
from .estimators import EstimatorKind, EstimatorSpec, FirstStage, WeightSpec, build_first_stage, ccr_fit, fit
from .harness import SimulationPlan, run_plan, summarize

__all__ = [
    "Dataset", "DgpConfig", "GroundTruth", "Regime", "generate_dataset", "load_dataset", "save_dataset",
    "EstimatorKind", "EstimatorSpec", "FirstStage", "WeightSpec", "build_first_stage", "ccr_fit", "fit",
    "classify_regime", "error_decomposition", "key_quantities", "minimax_lower_bound", "recommend_estimator",
    "wedin_check",
    "SimulationPlan", "run_plan", "summarize",
]
__version__ = "0.1.0"
