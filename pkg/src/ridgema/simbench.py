"""Monte Carlo benchmark of the weight-selection methods.

Two designs are supported. In the *nested* design the truth has 400
slowly decaying coefficients and the candidates are the first 1..K columns,
so every candidate is misspecified. In the *non-nested* design the truth
has 12 columns (the last two with zero coefficients) and the 64 candidates
all contain the first six columns plus a subset of the remaining six.

Test-set accuracy is the mean squared distance from the true conditional
mean, normalized by the average over replications of the best single
model's error.
"""

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from threadpoolctl import threadpool_limits

from .criteria import METHODS, LABELS, CriterionConfig, canonical_method, compute_weights
from .exceptions import BenchmarkAborted, ModelAveragingError
from .model_space import (
    Dataset,
    ModelSpec,
    build_criterion_matrices,
    fit_models,
    model_predictions,
)
from .tuning import TuningConfig, tuning_average

MAX_FAILURE_RATE = 0.01


def nested_dimension(n: int) -> int:
    """Number of nested candidates, ``(log_4 n)^2`` rounded to the nearest integer."""
    return int(round((math.log(n) / math.log(4.0)) ** 2))


@dataclass(frozen=True)
class SimConfig:
    setting: str = "nested"
    n: int = 100
    alpha: float = 1.0
    rho: float = 0.3
    r2: float = 0.5
    hetero: bool = False
    reps: int = 200
    n_test: int = 1000
    methods: tuple = METHODS
    seed: int = 0
    sigma2: object = "largest_model"
    grid_size: int = 100
    folds: int = 10
    keep: int = 50
    n_jobs: int = 1

    def __post_init__(self):
        if self.setting not in ("nested", "nonnested"):
            raise ValueError(f"setting must be 'nested' or 'nonnested', got {self.setting!r}")
        if not 0 < self.r2 < 1:
            raise ValueError(f"r2 must lie in (0, 1), got {self.r2}")
        if not -1 < self.rho < 1:
            raise ValueError(f"rho must lie in (-1, 1), got {self.rho}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.reps < 1 or self.n_test < 1:
            raise ValueError("reps and n_test must be positive")
        object.__setattr__(self, "methods", tuple(canonical_method(m) for m in self.methods))
        if self.K > self.n - 1:
            raise ValueError(f"n={self.n} is too small for K={self.K} candidate columns")

    @property
    def K_true(self) -> int:
        return 400 if self.setting == "nested" else 12

    @property
    def K(self) -> int:
        return nested_dimension(self.n) if self.setting == "nested" else 12

    @property
    def M(self) -> int:
        return self.K if self.setting == "nested" else 64


def true_theta(cfg: SimConfig, c: float = 1.0) -> np.ndarray:
    """``c * sqrt(2 alpha) * k^(-alpha - 1/2)`` for ``k = 1..K_true``."""
    k = np.arange(1, cfg.K_true + 1, dtype=float)
    theta = c * math.sqrt(2.0 * cfg.alpha) * k ** (-cfg.alpha - 0.5)
    if cfg.setting == "nonnested":
        theta[10:] = 0.0
    return theta


@lru_cache(maxsize=16)
def _ar_cholesky(dim: int, rho: float) -> np.ndarray:
    idx = np.arange(dim)
    sigma = rho ** np.abs(idx[:, None] - idx[None, :])
    return np.linalg.cholesky(sigma)


def covariance(dim: int, rho: float) -> np.ndarray:
    idx = np.arange(dim)
    return rho ** np.abs(idx[:, None] - idx[None, :]).astype(float)


def calibrate_c(cfg: SimConfig) -> float:
    """Scale ``c`` that gives the configured population R^2.

    ``var(mu) = c^2 v1`` with ``v1 = theta(1)' Sigma theta(1)`` over the
    non-constant covariates; the average error variance is 1 in both the
    homoskedastic and the heteroskedastic design.
    """
    th = true_theta(cfg, 1.0)[1:]
    v1 = float(th @ covariance(th.size, cfg.rho) @ th)
    return math.sqrt(cfg.r2 / ((1.0 - cfg.r2) * v1))


class SimulationDgp:
    """Sampler for the benchmark designs; also usable as a stability-lab DGP."""

    def __init__(self, cfg: SimConfig, c: float = None):
        self.cfg = cfg
        self.c = calibrate_c(cfg) if c is None else float(c)
        self.theta = true_theta(cfg, self.c)
        self._chol = _ar_cholesky(cfg.K_true - 1, float(cfg.rho))

    @property
    def K(self) -> int:
        return self.cfg.K_true

    def sample_X(self, rng: np.random.Generator, size: int) -> np.ndarray:
        Z = rng.standard_normal((size, self.cfg.K_true - 1))
        return np.column_stack([np.ones(size), Z @ self._chol.T])

    def mean(self, X: np.ndarray) -> np.ndarray:
        return X @ self.theta

    def noise(self, rng: np.random.Generator, X: np.ndarray) -> np.ndarray:
        e = rng.standard_normal(X.shape[0])
        return e * np.abs(X[:, 1]) if self.cfg.hetero else e

    def sample(self, rng: np.random.Generator, size: int):
        X = self.sample_X(rng, size)
        return X, self.mean(X) + self.noise(rng, X)


def replication_rng(seed: int, rep_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep_index,)))


def generate(cfg: SimConfig, rep_index: int, dgp: SimulationDgp = None):
    """Training sample plus a noiseless test set for one replication.

    Returns
    -------
    train : Dataset
    test_mu : ndarray (n_test,)
        True conditional means at the test covariates.
    test_X : ndarray (n_test, K_true)
    """
    dgp = dgp or SimulationDgp(cfg)
    rng = replication_rng(cfg.seed, rep_index)
    X, y = dgp.sample(rng, cfg.n)
    test_X = dgp.sample_X(rng, cfg.n_test)
    return Dataset(X, y), dgp.mean(test_X), test_X


def build_specs(cfg: SimConfig) -> list:
    """Nested: first m columns for m = 1..K. Non-nested: first six columns plus
    each subset of columns 6..11, subsets in ascending bitmask order."""
    if cfg.setting == "nested":
        return [ModelSpec(tuple(range(m))) for m in range(1, cfg.K + 1)]
    base = tuple(range(6))
    return [ModelSpec(base + tuple(6 + j for j in range(6) if b >> j & 1))
            for b in range(64)]


def method_weights(method: str, ds: Dataset, specs, fits, cm, cfg: SimConfig, seed) -> np.ndarray:
    """Weights of one method; RMMA/RJMA go through the CV tuning-average."""
    if method in ("RMMA", "RJMA"):
        tcfg = TuningConfig(grid_size=cfg.grid_size, folds=cfg.folds, keep=cfg.keep,
                            seed=seed, criterion=method, sigma2=cfg.sigma2)
        return tuning_average(ds, specs, tcfg).final_weights.w
    return compute_weights(CriterionConfig(method), cm, ds.y).w


def run_replication(cfg: SimConfig, rep_index: int, specs=None, dgp=None) -> dict:
    specs = specs or build_specs(cfg)
    train, test_mu, test_X = generate(cfg, rep_index, dgp)
    fits = fit_models(train, specs)
    cm = build_criterion_matrices(train, specs, cfg.sigma2, fits=fits)
    gamma = model_predictions(test_X, specs, fits)
    model_mse = np.mean((test_mu[:, None] - gamma) ** 2, axis=0)
    tune_seed = int(np.random.SeedSequence(cfg.seed, spawn_key=(rep_index, 1)).generate_state(1)[0])
    mse = {}
    for method in cfg.methods:
        w = method_weights(method, train, specs, fits, cm, cfg, tune_seed)
        mse[method] = float(np.mean((test_mu - gamma @ w) ** 2))
    return {"rep": rep_index, "mse": mse, "min_model_mse": float(model_mse.min())}


def _safe_replication(cfg, rep_index, specs=None, dgp=None):
    # single-threaded BLAS keeps floating-point reductions identical across n_jobs
    with threadpool_limits(limits=1):
        try:
            return run_replication(cfg, rep_index, specs, dgp)
        except (ModelAveragingError, np.linalg.LinAlgError) as exc:
            return {"rep": rep_index, "error": f"{type(exc).__name__}: {exc}"}


@dataclass
class SimResult:
    config: SimConfig
    methods: tuple
    reps: np.ndarray
    raw_mse: np.ndarray
    min_model_mse: np.ndarray
    failures: list = field(default_factory=list)

    @property
    def infeasible_mse(self) -> float:
        return float(np.mean(self.min_model_mse))

    @property
    def mean_mse(self) -> dict:
        return {m: float(np.mean(self.raw_mse[:, j].copy())) for j, m in enumerate(self.methods)}

    @property
    def normalized_mse(self) -> dict:
        inf = self.infeasible_mse
        return {m: v / inf for m, v in self.mean_mse.items()}

    def summary_rows(self) -> list:
        norm = self.normalized_mse
        return [{"method": m, "label": LABELS[m], "mean_mse": self.mean_mse[m],
                 "normalized_mse": norm[m], "infeasible_mse": self.infeasible_mse}
                for m in self.methods]


def run_benchmark(cfg: SimConfig) -> SimResult:
    """Run every replication and aggregate per-method test errors.

    Replications use independent seed streams keyed by their index, so the
    result does not depend on ``n_jobs``.

    Raises
    ------
    BenchmarkAborted
        If more than 1% of the replications fail.
    """
    if cfg.n_jobs == 1:
        specs, dgp = build_specs(cfg), SimulationDgp(cfg)
        outs = [_safe_replication(cfg, r, specs, dgp) for r in range(cfg.reps)]
    else:
        from joblib import Parallel, delayed

        # workers rebuild the design from cfg rather than receiving pickled arrays
        outs = Parallel(n_jobs=cfg.n_jobs)(
            delayed(_safe_replication)(cfg, r, None, None) for r in range(cfg.reps)
        )
    failures = [o for o in outs if "error" in o]
    if len(failures) > MAX_FAILURE_RATE * cfg.reps:
        raise BenchmarkAborted(
            f"{len(failures)} of {cfg.reps} replications failed; first: {failures[0]['error']}",
            failures,
        )
    ok = [o for o in outs if "error" not in o]
    raw = np.array([[o["mse"][m] for m in cfg.methods] for o in ok])
    return SimResult(
        config=cfg,
        methods=cfg.methods,
        reps=np.array([o["rep"] for o in ok]),
        raw_mse=raw,
        min_model_mse=np.array([o["min_model_mse"] for o in ok]),
        failures=failures,
    )


def write_records(result: SimResult, path) -> None:
    """One JSON record per (method, replication) plus a trailing summary record."""
    with open(path, "w") as fh:
        for i, rep in enumerate(result.reps):
            for j, m in enumerate(result.methods):
                fh.write(json.dumps({"record": "mse", "method": LABELS[m], "rep": int(rep),
                                     "mse": float(result.raw_mse[i, j])}) + "\n")
            fh.write(json.dumps({"record": "min_model_mse", "rep": int(rep),
                                 "mse": float(result.min_model_mse[i])}) + "\n")
        for f in result.failures:
            fh.write(json.dumps({"record": "failure", **f}) + "\n")
        fh.write(json.dumps({
            "record": "summary",
            # n_jobs changes scheduling only, so it is left out to keep files comparable
            "config": {k: (list(v) if isinstance(v, tuple) else v)
                       for k, v in asdict(result.config).items() if k != "n_jobs"},
            "infeasible_mse": result.infeasible_mse,
            "normalized_mse": {LABELS[m]: v for m, v in result.normalized_mse.items()},
        }, sort_keys=True) + "\n")


def write_summary_csv(results, path) -> None:
    """Plot-ready table with columns r2, method, normalized_mse, mean_mse."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r2", "method", "normalized_mse", "mean_mse"])
        for res in results:
            for row in res.summary_rows():
                w.writerow([res.config.r2, row["label"], repr(row["normalized_mse"]),
                            repr(row["mean_mse"])])
