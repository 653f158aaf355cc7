from .chisq import chi_sq_cdf, chi_sq_quantile, regularized_gamma_p
from .irls import (ConvergenceError, GlmFit, aic_penalized, expit, fit_logistic,
                   linear_predictor, predict_prob)
from .stepwise import StepwiseResult, allowed_moves, stepwise_select
from .terms import DesignMatrix, PolyBasis, Term, build_design, orthogonal_poly

__all__ = [
    "ConvergenceError", "DesignMatrix", "GlmFit", "PolyBasis", "StepwiseResult", "Term",
    "aic_penalized", "allowed_moves", "build_design", "chi_sq_cdf", "chi_sq_quantile",
    "expit", "fit_logistic", "linear_predictor", "orthogonal_poly", "predict_prob",
    "regularized_gamma_p", "stepwise_select",
]
