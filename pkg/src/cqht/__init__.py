"""Likelihood-ratio hypothesis testing for continuously monitored quantum systems."""

from .filters import AssumptiveState, GaussianFilter, HypothesisModel, PoissonFilter
from .gaussian_models import KalmanBucyFilter, LinearGaussianModel, build_force_models, chernoff_bounds
from .likelihood import LLRAccumulator, decide, gaussian_llr_increment, poisson_llr_increment, posterior
from .operators import LindbladSpec, build_annihilation, energy_op, quadrature
from .scenarios import RunResult, ScenarioConfig, run_scenario
from .trajectories import MeasurementRecord, TruthSpec, make_rng

__version__ = "0.1.0"

__all__ = [
    "AssumptiveState",
    "GaussianFilter",
    "HypothesisModel",
    "PoissonFilter",
    "KalmanBucyFilter",
    "LinearGaussianModel",
    "build_force_models",
    "chernoff_bounds",
    "LLRAccumulator",
    "decide",
    "gaussian_llr_increment",
    "poisson_llr_increment",
    "posterior",
    "LindbladSpec",
    "build_annihilation",
    "energy_op",
    "quadrature",
    "RunResult",
    "ScenarioConfig",
    "run_scenario",
    "MeasurementRecord",
    "TruthSpec",
    "make_rng",
]
