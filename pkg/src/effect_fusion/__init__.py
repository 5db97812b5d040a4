"""Bayesian effect fusion for categorical predictors in linear regression."""

from .design import (CovariateSpec, DesignMatrix, FusionPattern, Scale, build_design,
                     check_propriety, design_from_codes, ingest_csv, standardize)
from .estimator import EffectFusionRegressor
from .exceptions import ConfigError, DataError, EffectFusionError, NumericalError, ProvenanceError
from .gibbs import PosteriorDraws, SamplerConfig, iat_summary, run_chain, run_chains
from .prior import (HyperParams, IndicatorState, build_structure_matrix,
                    marginal_fusion_probability_curve, simulate_prior)
from .select import (Partition, minimize_binder, posterior_similarity, refit_selected,
                     selection_report)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "CovariateSpec", "DataError", "DesignMatrix", "EffectFusionError",
    "EffectFusionRegressor", "FusionPattern", "HyperParams", "IndicatorState", "NumericalError",
    "Partition", "PosteriorDraws", "ProvenanceError", "SamplerConfig", "Scale", "build_design",
    "build_structure_matrix", "check_propriety", "design_from_codes", "iat_summary",
    "ingest_csv", "marginal_fusion_probability_curve", "minimize_binder", "posterior_similarity",
    "refit_selected", "run_chain", "run_chains", "selection_report", "simulate_prior",
    "standardize",
]
