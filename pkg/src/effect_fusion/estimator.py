"""Scikit-learn style wrapper around sampling, selection and refit."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_categorical_matrix, check_per_covariate, check_response, infer_levels
from .design import CovariateSpec, build_design
from .gibbs import SamplerConfig, run_chain
from .prior import DEFAULT_G0_SHAPE, DEFAULT_R, HyperParams
from .select import refit_selected, select_partitions


class EffectFusionRegressor(RegressorMixin, BaseEstimator):
    """Linear regression on categorical predictors with level fusion.

    ``X`` holds one column of level labels per covariate. After ``fit``,
    ``partitions_`` gives the selected grouping of levels per covariate and
    ``coef_`` the refitted effects on the original dummy coding (or posterior
    means when ``refit=False``).

    Parameters
    ----------
    scales : str or list of str
        ``"nominal"``, ``"ordinal"`` or ``"selection"`` per covariate.
    levels : list of sequences, optional
        Level order per covariate, baseline first. Inferred (sorted) if omitted.
    G0 : float or list, optional
        Slab scale; defaults to 2 for nominal and 20 for other covariates.
    """

    def __init__(self, scales="nominal", levels=None, r=DEFAULT_R, g0=DEFAULT_G0_SHAPE,
                 G0=None, G0_lambda=None, n_burnin=5000, n_iter=10000, warm_start=None,
                 seed=0, refit=True, B0=1e4, refit_iter=3000, refit_burnin=1000):
        self.scales = scales
        self.levels = levels
        self.r = r
        self.g0 = g0
        self.G0 = G0
        self.G0_lambda = G0_lambda
        self.n_burnin = n_burnin
        self.n_iter = n_iter
        self.warm_start = warm_start
        self.seed = seed
        self.refit = refit
        self.B0 = B0
        self.refit_iter = refit_iter
        self.refit_burnin = refit_burnin

    def _specs(self, X: np.ndarray) -> tuple[CovariateSpec, ...]:
        p = X.shape[1]
        scales = check_per_covariate(self.scales, p, "scales")
        levels = self.levels if self.levels is not None else [infer_levels(X[:, h]) for h in range(p)]
        if len(levels) != p:
            raise ValueError(f"levels needs {p} entries, got {len(levels)}")
        names = getattr(self, "feature_names_in_", None)
        return tuple(
            CovariateSpec(str(names[h]) if names is not None else f"x{h}", tuple(levels[h]), scales[h])
            for h in range(p)
        )

    def fit(self, X, y):
        if hasattr(X, "columns"):
            self.feature_names_in_ = np.asarray(X.columns, dtype=object)
        elif hasattr(self, "feature_names_in_"):
            del self.feature_names_in_
        X = check_categorical_matrix(X)
        y = check_response(y, X.shape[0])
        specs = self._specs(X)
        G0 = check_per_covariate(self.G0, len(specs), "G0")
        hyper = [
            HyperParams.default_for(s.scale, r=self.r, g0=self.g0, G0_lambda=self.G0_lambda,
                                    **({} if g is None else {"G0": g}))
            for s, g in zip(specs, G0)
        ]
        config = SamplerConfig(n_burnin=self.n_burnin, n_iter=self.n_iter,
                               unrestricted_warm_start=self.warm_start, seed=self.seed)
        design = build_design([X[:, h] for h in range(X.shape[1])], specs)
        self.specs_ = specs
        self.n_features_in_ = X.shape[1]
        self.draws_ = run_chain(design, y, hyper, config)
        self.similarity_, self.partitions_ = select_partitions(self.draws_)
        if self.refit:
            self.refit_ = refit_selected(design, y, self.partitions_, self.B0, self.refit_iter,
                                         self.refit_burnin, self.seed)
            coef = self.refit_.coef_vector()
        else:
            coef = self.draws_.beta.mean(axis=0)
        self.intercept_ = float(coef[0])
        self.coef_ = coef[1:]
        self.level_effects_ = design.level_effects(coef)
        self.excluded_ = [p.excluded for p in self.partitions_]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_categorical_matrix(X, self.n_features_in_)
        design = build_design([X[:, h] for h in range(X.shape[1])], self.specs_, check_rank=False)
        return design.X[:, 1:] @ self.coef_ + self.intercept_
