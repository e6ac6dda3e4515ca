"""Locally D-optimal designs for count models with binary item features."""

from .fisher import (Design, InfoMatrix, closed_form_sensitivity_xi0,
                     full_factorial, info_matrix, log_det, sensitivity, xi0)
from .model import (ModelSpec, StandardizedParams, inverse_weight, mean_response,
                    regression_vector, standardize, standardized_inverse_weight,
                    variance_response)
from .optimality import (CertificationReport, ConditionReport, boundary_curve,
                         d_efficiency, fullfactorial_min_efficiency,
                         indifference_efficiency_xi0, kw_certify, lemma1_check,
                         theorem1_check)
from .optimizer import OptimizeReport, compare_designs, optimize, round_to_exact
from .simulate import (SimConfig, covariance_check, fit_mle, sample_responses)

__version__ = "0.1.0"
