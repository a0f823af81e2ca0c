"""Bayesian hierarchical modelling of athletic performance trajectories.

Continuous-time model of career and within-season performance: a
population age curve, per-athlete piecewise-linear career trends,
shape-constrained within-season trajectories built from restricted
Bernstein polynomials with global-local shrinkage, and skewed
heavy-tailed observation errors, fitted by a blocked, interweaved,
adaptive Metropolis-within-Gibbs sampler.
"""

__version__ = "0.1.0"

from . import bernstein, samplers, summaries
from .bernstein import RbpCoefficientSet
from .design import DesignCache, build_design
from .engine import ChainConfig, init_state, run_chain
from .model import (Dataset, ParamState, Performance, PriorConfig,
                    mean_response, population_trajectory, sample_error,
                    trend_trajectory)
from .simulate import SimDesign, generate_dataset, run_study
from .summaries import (PosteriorDraws, armse, average_effect_size, ess,
                        psrf, rmise, spearman, trajectory_band,
                        within_season_variability)

__all__ = [
    "__version__",
    "bernstein", "samplers", "summaries",
    "RbpCoefficientSet", "DesignCache", "build_design",
    "ChainConfig", "init_state", "run_chain",
    "Dataset", "ParamState", "Performance", "PriorConfig",
    "mean_response", "population_trajectory", "sample_error",
    "trend_trajectory",
    "SimDesign", "generate_dataset", "run_study",
    "PosteriorDraws", "armse", "average_effect_size", "ess", "psrf",
    "rmise", "spearman", "trajectory_band", "within_season_variability",
]
