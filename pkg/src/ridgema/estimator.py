"""scikit-learn compatible front end."""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .criteria import CriterionConfig, canonical_method, compute_weights
from .model_space import (
    Dataset,
    ModelSpec,
    averaged_coef,
    build_criterion_matrices,
    fit_models,
    model_predictions,
)
from .tuning import TuningConfig, tuning_average


def nested_specs(K: int, start: int = 1) -> list:
    """Specs ``{0}, {0, 1}, ..., {0, ..., K-1}`` (sizes ``start..K``)."""
    return [ModelSpec(tuple(range(m))) for m in range(start, K + 1)]


class ModelAveragingRegressor(RegressorMixin, BaseEstimator):
    """Linear model averaging over a family of least-squares candidate models.

    Parameters
    ----------
    models : "nested" or list of index sequences, default="nested"
        Candidate models as zero-based column subsets of ``X``. ``"nested"``
        uses the first 1, 2, ..., K columns. ``X`` should carry its own
        intercept column if one is wanted.
    method : str, default="RMMA"
        One of RMMA, RJMA, MMA, JMA, GM, SAIC, SBIC, AIC, BIC, CP (the short
        table labels RM, RJ, ... are accepted too).
    lam : "cv" or float, default="cv"
        Ridge penalty for RMMA/RJMA. ``"cv"`` runs the cross-validated
        tuning-average; a number fixes the penalty. Ignored by other methods.
    sigma2 : "largest_model" or float, default="largest_model"
        Error variance used by the Mallows-type criteria.
    grid_size, folds, keep : int
        Tuning grid size, number of CV folds, and number of retained
        penalties when ``lam="cv"``.
    random_state : int, default=0
        Seed for the fold partition.

    Attributes
    ----------
    weights_ : WeightVector
    coef_ : ndarray of shape (n_features,)
        Averaged coefficients; ``predict`` is ``X @ coef_``.
    specs_ : list of ModelSpec
    fits_ : list of FitBundle
    criterion_matrices_ : CriterionMatrices
    tuning_trace_ : TuningTrace or None
    """

    def __init__(self, models="nested", method="RMMA", lam="cv", sigma2="largest_model",
                 grid_size=100, folds=10, keep=50, random_state=0):
        self.models = models
        self.method = method
        self.lam = lam
        self.sigma2 = sigma2
        self.grid_size = grid_size
        self.folds = folds
        self.keep = keep
        self.random_state = random_state

    def _resolve_specs(self, K):
        if isinstance(self.models, str):
            if self.models != "nested":
                raise ValueError(f"unknown model family {self.models!r}")
            return nested_specs(K)
        return [m if isinstance(m, ModelSpec) else ModelSpec(tuple(m)) for m in self.models]

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True, dtype=float)
        ds = Dataset(X, y)
        method = canonical_method(self.method)
        specs = self._resolve_specs(ds.K)
        fits = fit_models(ds, specs)
        cm = build_criterion_matrices(ds, specs, self.sigma2, fits=fits)

        self.tuning_trace_ = None
        if method in ("RMMA", "RJMA") and isinstance(self.lam, str):
            if self.lam != "cv":
                raise ValueError(f"lam must be 'cv' or a number, got {self.lam!r}")
            cfg = TuningConfig(grid_size=self.grid_size, folds=self.folds, keep=self.keep,
                               seed=self.random_state, criterion=method, sigma2=self.sigma2)
            self.tuning_trace_ = tuning_average(ds, specs, cfg)
            weights = self.tuning_trace_.final_weights
        else:
            lam = 0.0 if isinstance(self.lam, str) else self.lam
            weights = compute_weights(CriterionConfig(method, lam), cm, ds.y)

        self.specs_ = specs
        self.fits_ = fits
        self.criterion_matrices_ = cm
        self.weights_ = weights
        self.coef_ = averaged_coef(specs, fits, weights.w, ds.K)
        self.n_features_in_ = ds.K
        return self

    def _check_X(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, but the model was fit with {self.n_features_in_}"
            )
        return X

    def predict(self, X):
        return self._check_X(X) @ self.coef_

    def transform(self, X):
        """Per-candidate-model predictions, shape (n_samples, n_models)."""
        return model_predictions(self._check_X(X), self.specs_, self.fits_)
