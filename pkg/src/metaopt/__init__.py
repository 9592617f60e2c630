"""metaopt: hyperparameter optimization for time-series forecasting.

Bayesian-optimization warm start plus LLM-guided iterative refinement over a
structured meta-knowledge prompt, with full run persistence and deterministic
transcript replay.
"""

__version__ = "0.1.0"

from .bo import Incumbent, Trial, TrialHistory, incumbent, run_bo
from .dataset import SeriesDataset, load_dataset
from .objective import EvalResult, TrainerSpec, make_split, rmse
from .orchestrator import OptimizationRunConfig, RunReport, compute_target_loss, run
from .search_space import (
    HyperparamConfig,
    ParamSpec,
    SearchSpace,
    TrustRegion,
    apply_trust_region,
    default_bilstm_space,
    sample_uniform,
    validate_config,
)
from .series_stats import MetaFeatureVector, MetaSummary, extract_meta_features, summarize

__all__ = [
    "EvalResult",
    "HyperparamConfig",
    "Incumbent",
    "MetaFeatureVector",
    "MetaSummary",
    "OptimizationRunConfig",
    "ParamSpec",
    "RunReport",
    "SearchSpace",
    "SeriesDataset",
    "TrainerSpec",
    "Trial",
    "TrialHistory",
    "TrustRegion",
    "apply_trust_region",
    "compute_target_loss",
    "default_bilstm_space",
    "extract_meta_features",
    "incumbent",
    "load_dataset",
    "make_split",
    "rmse",
    "run",
    "run_bo",
    "sample_uniform",
    "summarize",
    "validate_config",
]
