"""Bootstrap resampling statistics of the LASSO by replicated vector
approximate message passing, with a brute-force resampling oracle."""

from restab.denoise_u import PoissonWeights, poisson_weights, u_moments, u_site_minimizer
from restab.denoise_x import soft_threshold, x_moments
from restab.engine import RvampResult, run
from restab.model import (
    BootstrapSpec,
    ConvergenceTrace,
    Dataset,
    MessageState,
    PenaltySpec,
    ResamplingStatistics,
    RvampConfig,
    validate_dataset,
)
from restab.statistics import compare, covariance_from_p2, stats_from_p1

__all__ = [
    "BootstrapSpec", "ConvergenceTrace", "Dataset", "MessageState", "PenaltySpec",
    "PoissonWeights", "ResamplingStatistics", "RvampConfig", "RvampResult",
    "compare", "covariance_from_p2", "poisson_weights", "run", "soft_threshold",
    "stats_from_p1", "u_moments", "u_site_minimizer", "validate_dataset", "x_moments",
]

__version__ = "0.1.0"
