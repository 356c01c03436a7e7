"""Exact, Monte Carlo and coupling tools for the number of non-isolated balls.

``n`` balls fall independently into ``m`` urns; ``Y`` counts the balls that
share their urn with at least one other ball.
"""

from .bounds import (
    C_gamma,
    coro1_rhs,
    eta,
    g_alpha,
    goldstein_bound,
    n_threshold,
    thm1_bound,
    thm2_report,
    variance_bounds,
)
from .coupling import (
    Coupler,
    conditional_increment,
    couple_batch,
    couple_general,
    couple_uniform,
    delta_upper_estimate,
    hat_p,
    pi_table,
)
from .errors import IsoballsError, ModelError, PrecisionError, PreconditionError, TooLargeError
from .exact import (
    IntegerPmf,
    distance_lower_bound,
    enumerate_pmf,
    exact_moments,
    exact_pmf,
    feller_cdf,
    feller_pmf,
    kolmogorov_distance,
)
from .model import Allocation, UrnModel, build_model, explicit, model_from_json, uniform
from .montecarlo import McSummary, dkw_radius, mc_run

__version__ = "0.1.0"

__all__ = [
    "Allocation", "C_gamma", "Coupler", "IntegerPmf", "IsoballsError", "McSummary", "ModelError",
    "PrecisionError", "PreconditionError", "TooLargeError", "UrnModel", "build_model",
    "conditional_increment", "coro1_rhs", "couple_batch", "couple_general", "couple_uniform",
    "delta_upper_estimate", "distance_lower_bound", "dkw_radius", "enumerate_pmf", "eta",
    "exact_moments", "exact_pmf", "explicit", "feller_cdf", "feller_pmf", "g_alpha",
    "goldstein_bound", "hat_p", "kolmogorov_distance", "mc_run", "model_from_json", "n_threshold",
    "pi_table", "thm1_bound", "thm2_report", "uniform", "variance_bounds",
]
