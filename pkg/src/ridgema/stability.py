"""Empirical stability, generalization and consistency gaps of weight choices.

Expectations over the data distribution are replaced by Monte Carlo
averages, and every estimate is reported together with its Monte Carlo
standard error. The ridge-trace part decomposes the distance between the
penalized weights and the risk-optimal weights into a variance part and a
bias part as a function of the penalty.
"""

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import bisect

from .criteria import (
    CriterionConfig,
    WeightVector,
    _check_dims,
    compute_weights,
    jackknife_gram,
    mallows_gram,
)
from .exceptions import ModelAveragingError, SingularMoment
from .model_space import (
    CriterionMatrices,
    Dataset,
    ModelSpec,
    build_criterion_matrices,
    fit_models,
    model_predictions,
)

GAP_KINDS = ("consistency", "ploo", "floo", "ro", "aerm", "generalization")


class MCEstimate(NamedTuple):
    value: float
    stderr: float


class GaussianLinearDgp:
    """``y = x'theta + e`` with ``x = (1, z)``, ``z ~ N(0, Sigma)``, ``Sigma_kl = rho^|k-l|``.

    ``e`` is ``N(0, sigma^2)``, or ``N(0, sigma^2 z_1^2)`` when ``hetero``.
    """

    def __init__(self, theta, rho: float = 0.0, sigma: float = 1.0, hetero: bool = False):
        self.theta = np.asarray(theta, dtype=float)
        self.rho = float(rho)
        self.sigma = float(sigma)
        self.hetero = hetero
        idx = np.arange(self.K - 1)
        self.cov = self.rho ** np.abs(idx[:, None] - idx[None, :]).astype(float)
        self._chol = np.linalg.cholesky(self.cov) if self.K > 1 else np.zeros((0, 0))

    @property
    def K(self) -> int:
        return self.theta.size

    def sample_X(self, rng, size):
        Z = rng.standard_normal((size, self.K - 1)) @ self._chol.T
        return np.column_stack([np.ones(size), Z])

    def mean(self, X):
        return X @ self.theta

    def sample(self, rng, size):
        X = self.sample_X(rng, size)
        e = self.sigma * rng.standard_normal(size)
        if self.hetero:
            e = e * np.abs(X[:, 1])
        return X, self.mean(X) + e

    def second_moment(self) -> np.ndarray:
        """``E[x x']``."""
        S = np.zeros((self.K, self.K))
        S[0, 0] = 1.0
        S[1:, 1:] = self.cov
        return S

    def risk(self, beta) -> float:
        """Exact ``E(y* - x*'beta)^2`` for a fixed coefficient vector."""
        d = self.theta - np.asarray(beta, dtype=float)
        noise = self.sigma ** 2 * (self.cov[0, 0] if self.hetero else 1.0)
        return float(d @ self.second_moment() @ d + noise)


def _squared_loss_mc(pred, y) -> MCEstimate:
    loss = (y - pred) ** 2
    return MCEstimate(float(loss.mean()), float(loss.std(ddof=1) / np.sqrt(loss.size))
                      if loss.size > 1 else 0.0)


def risk(w, specs: Sequence[ModelSpec], fits, dgp, n_mc: int, seed) -> MCEstimate:
    """Monte Carlo estimate of ``E (y* - x*'theta_hat(w))^2`` with the fits held fixed."""
    if n_mc < 1:
        raise ValueError("n_mc must be at least 1")
    w = np.asarray(getattr(w, "w", w), dtype=float)
    X, y = dgp.sample(np.random.default_rng(seed), n_mc)
    return _squared_loss_mc(model_predictions(X, specs, fits) @ w, y)


def empirical_risk(w, cm: CriterionMatrices, y) -> float:
    """``n^-1 ||y - Omega_hat w||^2``."""
    w, y = _check_dims(w, cm, y)
    r = y - cm.omega_hat @ w
    return float(r @ r) / cm.n


def _oracle_from_sample(gamma, ystar):
    A = gamma.T @ gamma / gamma.shape[0]
    c = gamma.T @ ystar / gamma.shape[0]
    ev = np.linalg.eigvalsh(A)
    if not (ev[-1] > 0 and ev[0] / ev[-1] > 1e-12):
        raise SingularMoment(
            f"Monte Carlo second-moment matrix of model predictions is singular "
            f"(eigenvalues in [{ev[0]:.3e}, {ev[-1]:.3e}])"
        )
    return np.linalg.solve(A, c)


def oracle_weights(specs: Sequence[ModelSpec], fits, dgp, n_mc: int, seed) -> WeightVector:
    """Risk-minimizing unrestricted weights ``E(g'g)^-1 E(g'y*)`` from Monte Carlo moments,
    where ``g`` is the row of per-model predictions at a fresh draw."""
    X, y = dgp.sample(np.random.default_rng(seed), n_mc)
    return WeightVector(_oracle_from_sample(model_predictions(X, specs, fits), y))


# --- gap estimation ---------------------------------------------------------

@dataclass(frozen=True)
class GapReport:
    gap_name: str
    estimate: float
    mc_stderr: float
    replications: int
    failures: int = 0
    values: np.ndarray = None


def _procedure(X, y, specs, method: CriterionConfig, sigma2):
    ds = Dataset(X, y)
    fits = fit_models(ds, specs)
    cm = build_criterion_matrices(ds, specs, sigma2, fits=fits)
    return fits, cm, compute_weights(method, cm, y).w


def _point_loss(x, y, specs, fits, w):
    return float((y - model_predictions(x[None, :], specs, fits)[0] @ w) ** 2)


def _replication_gaps(kinds, X, y, specs, method, sigma2, Xt, yt, draw_replacements,
                      star_sample, full):
    n = y.size
    fits, cm, w = _procedure(X, y, specs, method, sigma2)
    gamma_t = model_predictions(Xt, specs, fits)
    F = float(np.mean((yt - gamma_t @ w) ** 2))
    Fhat = empirical_risk(w, cm, y)
    out = {}
    if "generalization" in kinds:
        out["generalization"] = Fhat - F
    if "aerm" in kinds:
        w_tilde = np.linalg.lstsq(cm.omega_hat, y, rcond=None)[0]
        out["aerm"] = Fhat - empirical_risk(w_tilde, cm, y)
    if "consistency" in kinds:
        Xs, ys = star_sample
        w_star = _oracle_from_sample(model_predictions(Xs, specs, fits), ys)
        out["consistency"] = F - float(np.mean((yt - gamma_t @ w_star) ** 2))

    rows = range(n) if full else [n - 1]
    need_loo = {"ploo", "floo"} & set(kinds)
    ploo, floo, ro = [], [], []
    if "ro" in kinds:
        Xr, yr = draw_replacements(len(rows))
    for j, i in enumerate(rows):
        L_i = _point_loss(X[i], y[i], specs, fits, w)
        if need_loo:
            keep = np.arange(n) != i
            f_m, _, w_m = _procedure(X[keep], y[keep], specs, method, sigma2)
            if "ploo" in kinds:
                F_m = float(np.mean((yt - model_predictions(Xt, specs, f_m) @ w_m) ** 2))
                ploo.append(F - F_m)
            if "floo" in kinds:
                floo.append(L_i - _point_loss(X[i], y[i], specs, f_m, w_m))
        if "ro" in kinds:
            Xi, yi = X.copy(), y.copy()
            Xi[i], yi[i] = Xr[j], yr[j]
            f_r, _, w_r = _procedure(Xi, yi, specs, method, sigma2)
            ro.append(L_i - _point_loss(X[i], y[i], specs, f_r, w_r))
    if "ploo" in kinds:
        out["ploo"] = float(np.mean(ploo))
    if "floo" in kinds:
        out["floo"] = float(np.mean(floo))
    if "ro" in kinds:
        out["ro"] = float(np.mean(ro))
    return out


def gap_estimates(kinds, method: CriterionConfig, dgp, specs, n: int, reps: int, seed,
                  n_mc: int = 2000, sigma2="largest_model", full: bool = False) -> dict:
    """Estimate several gaps from the same replicated samples.

    Replication ``r`` draws its training sample, its replacement points and
    its Monte Carlo test set from streams keyed by ``(seed, r)``, so two calls
    with the same seed see identical samples whatever ``kinds`` they request.

    Parameters
    ----------
    kinds : sequence of str
        Any of consistency, ploo, floo, ro, aerm, generalization.
    method : CriterionConfig
        Weight-selection rule (RMMA/RJMA use the fixed penalty ``method.lam``).
    full : bool
        Average the leave-one-out / replace-one quantities over all ``n``
        observations instead of perturbing only the last one.
    """
    kinds = tuple(kinds)
    for k in kinds:
        if k not in GAP_KINDS:
            raise ValueError(f"unknown gap kind {k!r}")
    if reps < 2 or n < 3:
        raise ValueError("need reps >= 2 and n >= 3")
    specs = [s if isinstance(s, ModelSpec) else ModelSpec(tuple(s)) for s in specs]
    vals = {k: [] for k in kinds}
    failures = 0
    for r in range(reps):
        s_ss, z_ss, mc_ss, star_ss = np.random.SeedSequence(seed, spawn_key=(r,)).spawn(4)
        X, y = dgp.sample(np.random.default_rng(s_ss), n)
        Xt, yt = dgp.sample(np.random.default_rng(mc_ss), n_mc)
        z_gen = np.random.default_rng(z_ss)
        star = dgp.sample(np.random.default_rng(star_ss), n_mc) if "consistency" in kinds else None
        try:
            out = _replication_gaps(kinds, X, y, specs, method, sigma2, Xt, yt,
                                    lambda size: dgp.sample(z_gen, size), star, full)
        except ModelAveragingError:
            failures += 1
            continue
        for k in kinds:
            vals[k].append(out[k])
    reports = {}
    for k in kinds:
        v = np.asarray(vals[k])
        se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")
        reports[k] = GapReport(k, float(v.mean()) if v.size else float("nan"), se,
                               int(v.size), failures, v)
    return reports


def gap_estimate(kind: str, method: CriterionConfig, dgp, specs, n: int, reps: int, seed,
                 n_mc: int = 2000, sigma2="largest_model", full: bool = False) -> GapReport:
    """Monte Carlo estimate of a single gap; see :func:`gap_estimates`."""
    return gap_estimates([kind], method, dgp, specs, n, reps, seed, n_mc, sigma2, full)[kind]


# --- ridge trace ------------------------------------------------------------

@dataclass(frozen=True)
class RidgeTrace:
    lambdas: np.ndarray
    V: np.ndarray
    B: np.ndarray
    M1: np.ndarray
    M_full: np.ndarray
    lambda_hat: float
    M1_at_lambda_hat: float
    w0: np.ndarray
    w_star: np.ndarray
    eigenvalues: np.ndarray


class _TraceTerms:
    """Eigen-coordinates of the unpenalized and oracle weights."""

    def __init__(self, G, w0, w_star):
        self.zeta, P = np.linalg.eigh(G)
        self.c = P.T @ w0
        self.d = P.T @ w_star

    def V(self, lam):
        z = self.zeta
        return float(np.sum((self.c - self.d) ** 2 * z ** 2 / (lam + z) ** 2))

    def B(self, lam):
        z = self.zeta
        return float(np.sum(self.d ** 2 * lam ** 2 / (lam + z) ** 2))

    def M_full(self, lam):
        z = self.zeta
        return float(np.sum((self.c * z / (lam + z) - self.d) ** 2))

    def dM1(self, lam):
        z = self.zeta
        return float(np.sum((-2.0 * (self.c - self.d) ** 2 * z ** 2
                             + 2.0 * self.d ** 2 * lam * z) / (lam + z) ** 3))


def _upper_points(lambdas):
    yield from lambdas[1:]
    hi = max(float(lambdas[-1]), 1.0)
    for _ in range(200):
        hi *= 2.0
        yield hi


def _first_stationary_point(terms: _TraceTerms, lambdas: np.ndarray) -> float:
    f = terms.dM1
    if f(0.0) >= 0:
        return 0.0
    lo = 0.0
    for hi in _upper_points(lambdas):
        fh = f(hi)
        if fh == 0:
            return float(hi)
        if fh > 0:
            return float(bisect(f, lo, hi, xtol=1e-300, rtol=1e-8, maxiter=2000))
        lo = hi
    # dM1 < 0 everywhere: only possible when the oracle weights are zero
    return float("inf")


def ridge_trace(cm: CriterionMatrices, y, specs, fits, dgp, lambdas, n_mc: int, seed,
                which: str = "mallows", w_star=None) -> RidgeTrace:
    """Variance/bias decomposition of the penalized weights along a penalty grid.

    ``V(lam) = ||Z w0 - Z w*||^2`` and ``B(lam) = ||Z w* - w*||^2`` with
    ``Z = (G + lam I)^-1 G``, evaluated in the eigenbasis of ``G``; ``G`` and
    ``w0`` come from the Mallows (``which="mallows"``) or jackknife criterion.
    ``lambda_hat`` is the first zero of ``dM1/dlam``, located on the grid and
    refined by bisection on the analytic derivative.
    """
    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.size == 0 or lambdas[0] != 0 or np.any(np.diff(lambdas) <= 0):
        raise ValueError("lambdas must be strictly increasing and start at 0")
    if which == "mallows":
        G, r = mallows_gram(cm, y)
    elif which == "jackknife":
        G, r = jackknife_gram(cm, y)
    else:
        raise ValueError(f"which must be 'mallows' or 'jackknife', got {which!r}")
    w0 = np.linalg.solve(G, r)
    if w_star is None:
        w_star = oracle_weights(specs, fits, dgp, n_mc, seed).w
    w_star = np.asarray(getattr(w_star, "w", w_star), dtype=float)
    t = _TraceTerms(G, w0, w_star)
    V = np.array([t.V(l) for l in lambdas])
    B = np.array([t.B(l) for l in lambdas])
    lam_hat = _first_stationary_point(t, lambdas)
    m1_hat = t.V(lam_hat) + t.B(lam_hat) if np.isfinite(lam_hat) else t.M_full(np.inf)
    return RidgeTrace(lambdas=lambdas, V=V, B=B, M1=V + B,
                      M_full=np.array([t.M_full(l) for l in lambdas]),
                      lambda_hat=float(lam_hat), M1_at_lambda_hat=float(m1_hat),
                      w0=w0, w_star=w_star, eigenvalues=t.zeta)


def assumption_diagnostics(ds: Dataset, specs, cm: CriterionMatrices) -> dict:
    """Eigenvalue summaries behind the regularity conditions on the design and
    on the criterion Gram matrices. Reported, never enforced."""
    big = max(range(len(specs)), key=lambda m: (specs[m].k, m))
    XM = ds.X[:, specs[big].indices]
    ex = np.linalg.eigvalsh(XM.T @ XM / ds.n)
    eh = np.linalg.eigvalsh(cm.omega_hat.T @ cm.omega_hat / ds.n)
    eb = np.linalg.eigvalsh(cm.omega_bar.T @ cm.omega_bar / ds.n)
    return {
        "design_min_eig": float(ex[0]),
        "design_max_eig_over_K": float(ex[-1] / XM.shape[1]),
        "omega_hat_min_eig": float(eh[0]),
        "omega_hat_max_eig_over_M": float(eh[-1] / cm.M),
        "omega_bar_min_eig": float(eb[0]),
        "omega_bar_max_eig_over_M": float(eb[-1] / cm.M),
    }
