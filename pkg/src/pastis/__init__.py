"""Sparse drift inference for stochastic differential equations.

Simulators (``sde_sim``, ``spde_sim``), basis libraries (``basis``), drift
and diffusion estimators (``estimators``), information criteria with greedy
model search (``selection``) and the benchmark harness (``experiments``,
``cli``).
"""

from ._backend import BACKEND
from .basis import (BasisLibrary, FieldBasis, ModelBasis, SDEBasis, gray_scott_library, lv_library,
                    polynomial_library, true_model)
from .errors import PastisError
from .estimators import (DiffusionEstimate, FitResult, diffusion_3pt, diffusion_simple, diffusion_vestergaard,
                         drift_error, error_estimate_multiplicative, fit_aml, fit_shift, fit_stratonovich,
                         fit_trapeze, gram, log_likelihood, log_likelihood_dt, log_likelihood_shift)
from .sde_sim import DriftSpec, NoiseSpec, Trajectory, add_measurement_noise, simulate, subsample
from .selection import (CriterionSpec, accuracy, cv_score, greedy_search, gumbel_location, max_gain_cdf,
                        predicted_error_rate, score, stlsq)
from .spde_sim import GrayScottParams, GridSpec, simulate_gray_scott

__version__ = "0.1.0"
