"""Candidate models and the per-model least-squares machinery.

Every candidate model is a subset of the columns of a common design matrix.
Fitting a model produces its OLS coefficients, fitted values, hat-matrix
diagonal and leave-one-out fitted values; stacking those across models gives
the two ``n x M`` matrices that the Mallows and jackknife criteria operate on.

Column indices are zero-based throughout.
"""

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.linalg import solve_triangular

from .exceptions import (
    DegenerateVariance,
    DimensionMismatch,
    LeverageOverflow,
    SingularDesign,
)

RCOND_FLOOR = 1e-12
LEVERAGE_CEILING = 1.0 - 1e-10

Sigma2Policy = Union[str, float]


@dataclass(frozen=True)
class Dataset:
    """Design matrix ``X`` (n x K) and response ``y`` (n,)."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or y.ndim != 1:
            raise DimensionMismatch("X must be 2-D and y 1-D")
        if X.shape[0] != y.shape[0]:
            raise DimensionMismatch(
                f"X has {X.shape[0]} rows but y has {y.shape[0]} entries"
            )
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError("dataset needs at least one row and one column")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def K(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.X[rows], self.y[rows])


@dataclass(frozen=True)
class ModelSpec:
    """A candidate model: an ordered tuple of distinct column indices."""

    indices: tuple

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(idx) == 0:
            raise ValueError("a model needs at least one covariate")
        if len(set(idx)) != len(idx):
            raise ValueError(f"duplicate column indices in {idx}")
        if min(idx) < 0:
            raise ValueError(f"negative column index in {idx}")
        object.__setattr__(self, "indices", idx)

    @property
    def k(self) -> int:
        return len(self.indices)

    def check(self, K: int, n: int = None) -> None:
        if max(self.indices) >= K:
            raise DimensionMismatch(
                f"model uses column {max(self.indices)} but X has {K} columns"
            )
        if n is not None and self.k > n:
            raise SingularDesign(f"model has {self.k} covariates but only {n} rows")


@dataclass(frozen=True)
class FitBundle:
    """OLS artifacts of one candidate model."""

    theta_hat: np.ndarray
    fitted: np.ndarray
    hat_diag: np.ndarray
    loo_fitted: np.ndarray
    rcond: float = field(default=np.nan)

    @property
    def k(self) -> int:
        return self.theta_hat.shape[0]


@dataclass(frozen=True)
class CriterionMatrices:
    """Fitted-value matrix, leave-one-out fitted-value matrix, model sizes and sigma^2."""

    omega_hat: np.ndarray
    omega_bar: np.ndarray
    kappa: np.ndarray
    sigma2_hat: float

    def __post_init__(self):
        if self.omega_hat.shape != self.omega_bar.shape:
            raise DimensionMismatch("omega_hat and omega_bar shapes differ")
        if self.kappa.shape != (self.omega_hat.shape[1],):
            raise DimensionMismatch("kappa length must equal the number of models")
        if not self.sigma2_hat > 0:
            raise DegenerateVariance(f"sigma2_hat must be positive, got {self.sigma2_hat}")

    @property
    def n(self) -> int:
        return self.omega_hat.shape[0]

    @property
    def M(self) -> int:
        return self.omega_hat.shape[1]


def as_specs(specs) -> list:
    return [s if isinstance(s, ModelSpec) else ModelSpec(tuple(s)) for s in specs]


def fit_ols(ds: Dataset, spec: ModelSpec, rcond_floor: float = RCOND_FLOOR,
            model_index: int = None) -> FitBundle:
    """Least-squares fit of one candidate model via a thin QR factorization.

    Parameters
    ----------
    ds : Dataset
    spec : ModelSpec
    rcond_floor : float
        Smallest acceptable reciprocal condition number of ``X_m'X_m``.
    model_index : int, optional
        Reported in error messages.

    Returns
    -------
    FitBundle

    Raises
    ------
    SingularDesign
        If ``X_m'X_m`` is numerically singular.
    LeverageOverflow
        If some hat diagonal is within 1e-10 of one.
    """
    spec.check(ds.K, ds.n)
    Xm = ds.X[:, spec.indices]
    Q, R = np.linalg.qr(Xm, mode="reduced")
    sv = np.linalg.svd(R, compute_uv=False)
    rcond = (sv[-1] / sv[0]) ** 2 if sv[0] > 0 else 0.0
    if not rcond > rcond_floor:
        raise SingularDesign(
            f"model {model_index}: X_m'X_m reciprocal condition {rcond:.3e} "
            f"below floor {rcond_floor:.1e}",
            model_index=model_index,
        )
    theta = solve_triangular(R, Q.T @ ds.y, lower=False)
    fitted = Xm @ theta
    hat_diag = np.einsum("ij,ij->i", Q, Q)
    if np.any(hat_diag >= LEVERAGE_CEILING):
        i = int(np.argmax(hat_diag))
        raise LeverageOverflow(
            f"model {model_index}: leverage h[{i}] = {hat_diag[i]:.12f} is numerically 1",
            model_index=model_index,
        )
    loo = ds.y - (ds.y - fitted) / (1.0 - hat_diag)
    return FitBundle(theta_hat=theta, fitted=fitted, hat_diag=hat_diag,
                     loo_fitted=loo, rcond=float(rcond))


def fit_models(ds: Dataset, specs: Sequence[ModelSpec],
               rcond_floor: float = RCOND_FLOOR) -> list:
    return [fit_ols(ds, s, rcond_floor, model_index=m) for m, s in enumerate(specs)]


def largest_model_index(specs: Sequence[ModelSpec]) -> int:
    """Index of the spec with the most covariates; ties go to the last one."""
    sizes = [s.k for s in specs]
    kmax = max(sizes)
    return max(m for m, k in enumerate(sizes) if k == kmax)


def resolve_sigma2(ds: Dataset, specs, fits, policy: Sigma2Policy) -> float:
    if isinstance(policy, str):
        if policy != "largest_model":
            raise ValueError(f"unknown sigma2 policy {policy!r}")
        m = largest_model_index(specs)
        k = specs[m].k
        if ds.n <= k:
            raise DegenerateVariance(
                f"cannot estimate sigma^2: n={ds.n} <= k={k} for the largest model"
            )
        resid = ds.y - fits[m].fitted
        s2 = float(resid @ resid) / (ds.n - k)
        if not s2 > 0:
            raise DegenerateVariance("largest model interpolates y; sigma^2 estimate is 0")
        return s2
    s2 = float(policy)
    if not (np.isfinite(s2) and s2 > 0):
        raise DegenerateVariance(f"known sigma^2 must be positive, got {policy!r}")
    return s2


def build_criterion_matrices(ds: Dataset, specs: Sequence[ModelSpec],
                             sigma2_policy: Sigma2Policy = "largest_model",
                             fits=None) -> CriterionMatrices:
    """Stack per-model fitted and leave-one-out fitted values.

    ``sigma2_policy`` is either ``"largest_model"`` (residual mean square of
    the model with the most covariates, ties to the last spec) or a known
    positive variance.
    """
    specs = as_specs(specs)
    if not specs:
        raise ValueError("need at least one candidate model")
    if fits is None:
        fits = fit_models(ds, specs)
    omega_hat = np.column_stack([f.fitted for f in fits])
    omega_bar = np.column_stack([f.loo_fitted for f in fits])
    kappa = np.array([s.k for s in specs], dtype=int)
    s2 = resolve_sigma2(ds, specs, fits, sigma2_policy)
    return CriterionMatrices(omega_hat, omega_bar, kappa, s2)


def model_predictions(X: np.ndarray, specs: Sequence[ModelSpec], fits) -> np.ndarray:
    """Per-model predictions at the rows of ``X``; returns an (n_rows x M) matrix."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.column_stack([X[:, s.indices] @ f.theta_hat for s, f in zip(specs, fits)])


def averaged_coef(specs: Sequence[ModelSpec], fits, w, K: int) -> np.ndarray:
    """Full-length coefficient vector sum_m w_m * (theta_m scattered into K slots)."""
    w = np.asarray(w, dtype=float)
    if w.shape != (len(specs),):
        raise DimensionMismatch(f"weight length {w.shape} does not match {len(specs)} models")
    coef = np.zeros(K)
    for wm, s, f in zip(w, specs, fits):
        coef[list(s.indices)] += wm * f.theta_hat
    return coef


def model_average_prediction(specs: Sequence[ModelSpec], fits, w, x_new) -> float:
    """Prediction of the weighted model average at a single covariate vector."""
    w = np.asarray(getattr(w, "w", w), dtype=float)
    if w.shape != (len(specs),) or len(fits) != len(specs):
        raise DimensionMismatch(
            f"got {w.size} weights, {len(fits)} fits and {len(specs)} models"
        )
    x_new = np.asarray(x_new, dtype=float)
    if x_new.ndim != 1:
        raise DimensionMismatch("x_new must be a vector")
    return float(sum(wm * (x_new[list(s.indices)] @ f.theta_hat)
                     for wm, s, f in zip(w, specs, fits)))
