"""Joint calibration of survey weights to population totals and quantiles."""

from .constraints import (ConstraintSystem, build_system, quantile_pseudo_variable,
                          rescale_system, residuals)
from .core import (CalibrationError, InfeasibleError, RankDeficientError, SampleFrame,
                   TargetSpec, ValidationReport, WeightSet, validate_frame)
from .distances import DistanceSpec
from .el import ELWeights, el_centered_constraints, el_weights, solve_el
from .estimators import est_mean, est_quantile, est_total, naive_estimates
from .interp_cdf import (bracket, h_interp, interp_cdf, interp_quantile, population_cdf,
                         population_quantile, smooth_heaviside)
from .propensity import PropensityFit, fit_propensity, ipw_weights
from .solvers import SolverOptions, solve_dual, solve_quadratic

__version__ = "0.1.0"
