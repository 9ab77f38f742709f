"""Cross-validated averaging over a grid of ridge penalties.

For each penalty on an equally spaced grid over ``[0, M log n]`` the
criterion weights are scored by K-fold cross-validation. The candidates with
the lowest accumulated error are kept, refit on the full sample and combined
with weights proportional to ``exp(-0.5 * error)``.
"""

from dataclasses import dataclass

import numpy as np

from .criteria import GRAM_RCOND_FLOOR, WeightVector, jackknife_gram, mallows_gram
from .exceptions import SingularDesign, SingularGram
from .model_space import (
    Dataset,
    as_specs,
    build_criterion_matrices,
    fit_models,
    model_predictions,
)


@dataclass(frozen=True)
class TuningConfig:
    grid_size: int = 100
    folds: int = 10
    keep: int = 50
    seed: int = 0
    criterion: str = "RMMA"
    sigma2: object = "largest_model"

    def __post_init__(self):
        crit = str(self.criterion).upper()
        crit = {"RM": "RMMA", "RJ": "RJMA"}.get(crit, crit)
        if crit not in ("RMMA", "RJMA"):
            raise ValueError(f"criterion must be RMMA or RJMA, got {self.criterion!r}")
        object.__setattr__(self, "criterion", crit)
        if self.grid_size < 1:
            raise ValueError("grid_size must be at least 1")
        if not 1 <= self.keep <= self.grid_size:
            raise ValueError(f"keep must lie in [1, grid_size]; got {self.keep}")
        if self.folds < 2:
            raise ValueError("need at least two folds")


@dataclass(frozen=True)
class TuningTrace:
    lambdas: np.ndarray
    cv_errors: np.ndarray
    kept: np.ndarray
    coefficients: np.ndarray
    candidate_weights: np.ndarray
    final_weights: WeightVector


def lambda_grid(M: int, n: int, grid_size: int) -> np.ndarray:
    """``(L - 1) M log(n) / (grid_size - 1)`` for ``L = 1..grid_size``."""
    if grid_size == 1:
        return np.zeros(1)
    return np.arange(grid_size) * (M * np.log(n) / (grid_size - 1))


def kfold_partition(n: int, folds: int, seed) -> list:
    """Shuffle ``0..n-1`` and cut it into ``folds`` near-equal parts.

    The first ``n % folds`` parts get one extra element.
    """
    if not 1 <= folds <= n:
        raise ValueError(f"need 1 <= folds <= n, got folds={folds}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def ridge_path(G: np.ndarray, r: np.ndarray, lambdas, singular: str = "raise") -> np.ndarray:
    """Ridge solutions ``(G + lam I)^-1 r`` for every penalty; shape (len(lambdas), M).

    Uses one eigendecomposition of ``G``. A zero penalty on a Gram matrix
    below the condition floor raises :class:`SingularGram`, or with
    ``singular="pinv"`` returns the minimum-norm least-squares solution.
    """
    zeta, P = np.linalg.eigh(G)
    zeta = np.maximum(zeta, 0.0)
    a = P.T @ r
    lambdas = np.asarray(lambdas, dtype=float)
    denom = zeta[None, :] + lambdas[:, None]
    if np.any(lambdas == 0):
        floor = GRAM_RCOND_FLOOR * zeta[-1]
        if not (zeta[-1] > 0 and zeta[0] > floor):
            if singular != "pinv":
                raise SingularGram("Gram matrix is singular at lambda=0")
            zero = lambdas == 0
            inv = np.where(zeta > floor, 1.0 / np.where(zeta > floor, zeta, 1.0), 0.0)
            out = np.empty((lambdas.size, zeta.size))
            out[~zero] = a[None, :] / denom[~zero]
            out[zero] = a * inv
            return out @ P.T
    return (a[None, :] / denom) @ P.T


def _gram(cm, y, criterion):
    return mallows_gram(cm, y) if criterion == "RMMA" else jackknife_gram(cm, y)


def combination_coefficients(cv_errors: np.ndarray, kept: np.ndarray) -> np.ndarray:
    """``exp(-0.5 E_L)`` normalized over the kept candidates (min-shifted)."""
    e = np.asarray(cv_errors, dtype=float)[kept]
    c = np.exp(-0.5 * (e - e.min()))
    return c / c.sum()


def _cv_errors(ds, specs, cfg, folds):
    M = len(specs)
    errors = np.zeros(cfg.grid_size)
    all_rows = np.arange(ds.n)
    for test in folds:
        train = np.setdiff1d(all_rows, test, assume_unique=True)
        tr = ds.subset(train)
        fits = fit_models(tr, specs)
        cm = build_criterion_matrices(tr, specs, cfg.sigma2, fits=fits)
        G, r = _gram(cm, tr.y, cfg.criterion)
        W = ridge_path(G, r, lambda_grid(M, tr.n, cfg.grid_size), singular="pinv")
        gamma = model_predictions(ds.X[test], specs, fits)
        resid = ds.y[test][:, None] - gamma @ W.T
        errors += np.sum(resid ** 2, axis=0)
    return errors


def _seeded_cv_errors(ds, specs, cfg, seeds):
    try:
        return _cv_errors(ds, specs, cfg, kfold_partition(ds.n, cfg.folds, seeds))
    except SingularDesign:
        retry = seeds.spawn(1)[0]
        return _cv_errors(ds, specs, cfg, kfold_partition(ds.n, cfg.folds, retry))


def tuning_average(ds: Dataset, specs, cfg: TuningConfig = TuningConfig(),
                   partition=None) -> TuningTrace:
    """Cross-validated, error-weighted average of ridge criterion weights.

    Inside each fold the penalty grid is rebuilt from the training size and
    sigma^2 is re-estimated from the training rows. If a fold cannot be fit,
    the partition is redrawn once from a derived seed. ``partition`` (a list
    of test-index arrays) overrides the seeded split.
    """
    specs = as_specs(specs)
    M = len(specs)
    if not cfg.folds <= ds.n:
        raise ValueError(f"folds={cfg.folds} exceeds n={ds.n}")
    seeds = cfg.seed if isinstance(cfg.seed, np.random.SeedSequence) else np.random.SeedSequence(cfg.seed)
    if partition is not None:
        errors = _cv_errors(ds, specs, cfg, [np.asarray(p) for p in partition])
    else:
        errors = _seeded_cv_errors(ds, specs, cfg, seeds)

    kept = np.sort(np.argsort(errors, kind="stable")[: cfg.keep])
    coef = combination_coefficients(errors, kept)
    lambdas = lambda_grid(M, ds.n, cfg.grid_size)
    cm = build_criterion_matrices(ds, specs, cfg.sigma2)
    G, r = _gram(cm, ds.y, cfg.criterion)
    W = ridge_path(G, r, lambdas[kept], singular="pinv")
    final = coef @ W
    return TuningTrace(lambdas=lambdas, cv_errors=errors, kept=kept, coefficients=coef,
                       candidate_weights=W, final_weights=WeightVector(final))
