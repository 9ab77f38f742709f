"""Weight-selection criteria.

Ten methods are available:

* ``RMMA`` / ``RJMA`` -- ridge-penalized Mallows / jackknife criteria with
  unrestricted weights and a closed-form minimizer.
* ``MMA`` / ``JMA`` / ``GM`` -- Mallows, jackknife and generalized
  cross-validation averaging over the unit simplex.
* ``SAIC`` / ``SBIC`` -- exponentially smoothed AIC/BIC weights.
* ``AIC`` / ``BIC`` / ``CP`` -- single-model selection.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import (
    DegenerateRSS,
    DimensionMismatch,
    GCVDenominatorVanishes,
    NonConvergence,
    NotPSD,
    SingularGram,
)
from .model_space import CriterionMatrices, Dataset, ModelSpec, resolve_sigma2

METHODS = ("RMMA", "RJMA", "MMA", "JMA", "GM", "SAIC", "SBIC", "AIC", "BIC", "CP")

# Abbreviations used in result tables.
LABELS = {
    "AIC": "AI", "CP": "Cp", "BIC": "BI", "SAIC": "SA", "SBIC": "SB",
    "MMA": "MM", "RMMA": "RM", "GM": "GM", "JMA": "JM", "RJMA": "RJ",
}
_FROM_LABEL = {v.upper(): k for k, v in LABELS.items()}

GRAM_RCOND_FLOOR = 1e-12


def canonical_method(name: str) -> str:
    key = str(name).strip().upper()
    if key in METHODS:
        return key
    if key in _FROM_LABEL:
        return _FROM_LABEL[key]
    raise ValueError(f"unknown method {name!r}; expected one of {METHODS}")


@dataclass(frozen=True)
class WeightVector:
    """Model weights together with the constraint set they were chosen from."""

    w: np.ndarray
    constraint: str = "unrestricted"

    def __post_init__(self):
        w = np.array(self.w, dtype=float).reshape(-1)
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if self.constraint == "simplex":
            if w.min() < -1e-10 or abs(w.sum() - 1.0) > 1e-8:
                raise ValueError(f"weights are not on the simplex: {w}")
        elif self.constraint == "vertex":
            if not (np.count_nonzero(w) == 1 and w.sum() == 1.0):
                raise ValueError(f"not a vertex weight vector: {w}")
        elif self.constraint != "unrestricted":
            raise ValueError(f"unknown constraint tag {self.constraint!r}")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    def __len__(self):
        return self.w.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.w if dtype is None else self.w.astype(dtype)


@dataclass(frozen=True)
class CriterionConfig:
    method: str = "RMMA"
    lam: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "method", canonical_method(self.method))
        lam = float(self.lam)
        if not (np.isfinite(lam) and lam >= 0):
            raise ValueError(f"lambda must be finite and nonnegative, got {self.lam!r}")
        object.__setattr__(self, "lam", lam)

    @property
    def label(self) -> str:
        return LABELS[self.method]


def _check_dims(w, cm: CriterionMatrices, y):
    w = np.asarray(getattr(w, "w", w), dtype=float)
    y = np.asarray(y, dtype=float)
    if w.shape != (cm.M,):
        raise DimensionMismatch(f"weight length {w.size} != number of models {cm.M}")
    if y.shape != (cm.n,):
        raise DimensionMismatch(f"y length {y.size} != n {cm.n}")
    return w, y


def mallows_value(w, cm: CriterionMatrices, y, lam: float = 0.0) -> float:
    """``||y - Omega_hat w||^2 + 2 sigma^2 w'kappa + lam w'w``."""
    w, y = _check_dims(w, cm, y)
    r = y - cm.omega_hat @ w
    return float(r @ r + 2.0 * cm.sigma2_hat * (w @ cm.kappa) + lam * (w @ w))


def jackknife_value(w, cm: CriterionMatrices, y, lam: float = 0.0) -> float:
    """``||y - Omega_bar w||^2 + lam w'w``."""
    w, y = _check_dims(w, cm, y)
    r = y - cm.omega_bar @ w
    return float(r @ r + lam * (w @ w))


def ridge_solve(G: np.ndarray, r: np.ndarray, lam: float) -> np.ndarray:
    """Solve ``(G + lam I) w = r`` for a symmetric PSD ``G``.

    At ``lam == 0`` the Gram matrix must clear the reciprocal-condition floor.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if lam == 0:
        ev = np.linalg.eigvalsh(G)
        if not (ev[-1] > 0 and ev[0] / ev[-1] > GRAM_RCOND_FLOOR):
            raise SingularGram(
                f"Gram matrix is singular at lambda=0 (eigenvalue range "
                f"[{ev[0]:.3e}, {ev[-1]:.3e}])"
            )
    A = G + lam * np.eye(G.shape[0])
    return np.linalg.solve(A, r)


def mallows_gram(cm: CriterionMatrices, y):
    y = np.asarray(y, dtype=float)
    G = cm.omega_hat.T @ cm.omega_hat
    r = cm.omega_hat.T @ y - cm.sigma2_hat * cm.kappa
    return G, r


def jackknife_gram(cm: CriterionMatrices, y):
    y = np.asarray(y, dtype=float)
    return cm.omega_bar.T @ cm.omega_bar, cm.omega_bar.T @ y


def rmma_weights(cm: CriterionMatrices, y, lam: float) -> WeightVector:
    """Unrestricted minimizer of the ridge-penalized Mallows criterion."""
    G, r = mallows_gram(cm, y)
    return WeightVector(ridge_solve(G, r, float(lam)), "unrestricted")


def rjma_weights(cm: CriterionMatrices, y, lam: float) -> WeightVector:
    """Unrestricted minimizer of the ridge-penalized jackknife criterion."""
    G, r = jackknife_gram(cm, y)
    return WeightVector(ridge_solve(G, r, float(lam)), "unrestricted")


# --- simplex-constrained quadratic programming -----------------------------

def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto ``{w >= 0, sum(w) = 1}`` (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    tau = css[rho] / (rho + 1.0)
    return np.maximum(v - tau, 0.0)


def _kkt_violation(g: np.ndarray, w: np.ndarray, support_tol: float = 1e-9) -> float:
    support = w > support_tol
    if not support.any():
        return np.inf
    gs = g[support]
    nu = gs.min()
    spread = gs.max() - nu
    off = g[~support]
    below = max(0.0, nu - off.min()) if off.size else 0.0
    return float(max(spread, below))


def kkt_residual(G, b, w) -> float:
    """Largest violation of the simplex KKT conditions for ``w'Gw - 2b'w``.

    Gradient components must agree across the support and be no smaller
    off the support.
    """
    G = np.asarray(G, dtype=float)
    w = np.asarray(getattr(w, "w", w), dtype=float)
    g = 2.0 * (G @ w - np.asarray(b, dtype=float))
    return _kkt_violation(g, w)


def _clean_simplex(w: np.ndarray) -> np.ndarray:
    w = np.where(w < 0, 0.0, w)
    return w / w.sum()


def _polish(G, b, w, support_tol=1e-9):
    """Solve the equality-constrained problem on the current support."""
    S = np.flatnonzero(w > support_tol)
    for _ in range(w.size):
        if S.size == 0:
            return None
        k = S.size
        A = np.zeros((k + 1, k + 1))
        A[:k, :k] = G[np.ix_(S, S)]
        A[:k, k] = -1.0
        A[k, :k] = 1.0
        rhs = np.append(b[S], 1.0)
        sol = np.linalg.lstsq(A, rhs, rcond=None)[0]
        wS = sol[:k]
        if np.all(wS >= -1e-12):
            out = np.zeros_like(w)
            out[S] = np.maximum(wS, 0.0)
            s = out.sum()
            return out / s if s > 0 else None
        S = S[wS > 0]
    return None


def simplex_qp(G, b, max_iter: int = 100_000, tol: float = 1e-8) -> WeightVector:
    """Minimize ``w'Gw - 2 b'w`` over the unit simplex.

    Accelerated projected gradient (FISTA with adaptive restart) identifies
    the active set; each candidate support is then polished by solving the
    equality-constrained KKT system exactly. Iteration stops once the KKT
    residual falls below ``tol`` (scaled by the problem magnitude).

    Raises
    ------
    NotPSD
        ``G`` is not symmetric positive semidefinite within 1e-8.
    NonConvergence
        The KKT residual is still above 1e-6 after ``max_iter`` iterations.
    """
    G = np.asarray(G, dtype=float)
    b = np.asarray(b, dtype=float)
    M = b.shape[0]
    if G.shape != (M, M):
        raise DimensionMismatch(f"G has shape {G.shape}, b has length {M}")
    scale = max(1.0, float(np.abs(G).max(initial=0.0)), float(np.abs(b).max(initial=0.0)))
    if np.abs(G - G.T).max(initial=0.0) > 1e-8 * scale:
        raise NotPSD("G is not symmetric")
    G = 0.5 * (G + G.T)
    ev = np.linalg.eigvalsh(G)
    if ev[0] < -1e-8 * scale:
        raise NotPSD(f"G has negative eigenvalue {ev[0]:.3e}")
    if M == 1:
        return WeightVector(np.ones(1), "simplex")

    stop = tol * scale
    Lip = 2.0 * ev[-1]
    if Lip <= 1e-14 * scale:
        # Linear objective: spread mass over the maximizers of b.
        top = b >= b.max() - 1e-12 * scale
        return WeightVector(top / top.sum(), "simplex")

    def grad(v):
        return 2.0 * (G @ v - b)

    def obj(v):
        return float(v @ G @ v - 2.0 * b @ v)

    w = np.full(M, 1.0 / M)
    z = w.copy()
    t = 1.0
    f_prev = obj(w)
    last_support = None
    for it in range(max_iter):
        w_new = project_simplex(z - grad(z) / Lip)
        f_new = obj(w_new)
        if f_new > f_prev:
            # restart momentum
            t = 1.0
            z = w.copy()
            continue
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = w_new + ((t - 1.0) / t_new) * (w_new - w)
        w, t, f_prev = w_new, t_new, f_new

        if _kkt_violation(grad(w), w) < stop:
            return WeightVector(_clean_simplex(w), "simplex")
        support = tuple(np.flatnonzero(w > 1e-9))
        if support != last_support or it % 50 == 0:
            last_support = support
            wp = _polish(G, b, w)
            if wp is not None and _kkt_violation(grad(wp), wp) < stop:
                return WeightVector(_clean_simplex(wp), "simplex")

    res = _kkt_violation(grad(w), w)
    if res > 1e-6 * scale:
        raise NonConvergence(
            f"simplex QP did not converge in {max_iter} iterations (KKT residual {res:.3e})"
        )
    return WeightVector(_clean_simplex(w), "simplex")


def mma_weights(cm: CriterionMatrices, y) -> WeightVector:
    G, r = mallows_gram(cm, y)
    return simplex_qp(G, r)


def jma_weights(cm: CriterionMatrices, y) -> WeightVector:
    G, r = jackknife_gram(cm, y)
    return simplex_qp(G, r)


# --- generalized cross-validation averaging ---------------------------------

_GCV_DENOM_FLOOR = 1e-6


def gcv_value(w, cm: CriterionMatrices, y) -> float:
    """``n^-1 ||y - Omega_hat w||^2 / (1 - n^-1 w'kappa)^2``."""
    w, y = _check_dims(w, cm, y)
    n = cm.n
    d = 1.0 - (w @ cm.kappa) / n
    if d <= _GCV_DENOM_FLOOR:
        raise GCVDenominatorVanishes(f"1 - w'kappa/n = {d:.3e}")
    r = y - cm.omega_hat @ w
    return float((r @ r) / n / d ** 2)


def _gcv_value_grad(w, cm, y):
    n = cm.n
    d = 1.0 - (w @ cm.kappa) / n
    if d <= _GCV_DENOM_FLOOR:
        raise GCVDenominatorVanishes(f"1 - w'kappa/n = {d:.3e} at w = {w}")
    r = y - cm.omega_hat @ w
    a = (r @ r) / n
    g = -2.0 * (cm.omega_hat.T @ r) / (n * d ** 2) + 2.0 * a * cm.kappa / (n * d ** 3)
    return a / d ** 2, g


def _gcv_descent(w, cm, y, max_iter, tol):
    f, g = _gcv_value_grad(w, cm, y)
    step = 1.0 / max(np.abs(g).max(), 1e-12)
    for _ in range(max_iter):
        while True:
            w_try = project_simplex(w - step * g)
            f_try, g_try = _gcv_value_grad(w_try, cm, y)
            if f_try <= f + 1e-4 * (g @ (w_try - w)) or step < 1e-20:
                break
            step *= 0.5
        s = w_try - w
        dg = g_try - g
        w, f, g = w_try, f_try, g_try
        if np.abs(s).max() < 1e-15 or _kkt_violation(g, w) < tol * max(1.0, np.abs(g).max()):
            break
        sy = s @ dg
        # Barzilai-Borwein step
        step = (s @ s) / sy if sy > 0 else 2.0 * step
    return w, f


def gm_weights(cm: CriterionMatrices, y, max_iter: int = 10_000,
               tol: float = 1e-10) -> WeightVector:
    """Simplex weights minimizing the generalized cross-validation criterion.

    Projected gradient descent with Barzilai-Borwein steps and Armijo
    backtracking, started from the uniform weights and from the best single
    model; the lower of the two local minima is returned.
    """
    y = np.asarray(y, dtype=float)
    M = cm.M
    if M == 1:
        return WeightVector(np.ones(1), "simplex")
    vertex_vals = []
    for m in range(M):
        e = np.zeros(M)
        e[m] = 1.0
        vertex_vals.append(gcv_value(e, cm, y))
    best = int(np.argmin(vertex_vals))
    starts = [np.full(M, 1.0 / M), np.eye(M)[best]]
    results = [_gcv_descent(s, cm, y, max_iter, tol) for s in starts]
    w, _ = min(results, key=lambda wf: wf[1])
    return WeightVector(_clean_simplex(w), "simplex")


# --- information criteria ----------------------------------------------------

@dataclass(frozen=True)
class ScoreVector:
    scores: np.ndarray
    which: str = ""

    def __post_init__(self):
        s = np.array(self.scores, dtype=float).reshape(-1)
        if not np.all(np.isfinite(s)):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "scores", s)


def _scores(rss, kappa, n, which, sigma2_hat=None):
    rss = np.asarray(rss, dtype=float)
    if np.any(rss <= 0):
        raise DegenerateRSS(f"nonpositive residual sum of squares in models "
                            f"{np.flatnonzero(rss <= 0).tolist()}")
    which = which.upper()
    if which == "AIC":
        return n * np.log(rss / n) + 2.0 * kappa
    if which == "BIC":
        return n * np.log(rss / n) + kappa * np.log(n)
    if which == "CP":
        if sigma2_hat is None:
            raise ValueError("Cp needs sigma2_hat")
        return rss + 2.0 * sigma2_hat * kappa
    raise ValueError(f"unknown information criterion {which!r}")


def info_scores(ds: Dataset, specs: Sequence[ModelSpec], fits, which: str,
                sigma2_hat: float = None) -> ScoreVector:
    """Per-model AIC, BIC or Mallows Cp.

    For Cp, ``sigma2_hat`` defaults to the largest model's residual mean square.
    """
    kappa = np.array([s.k for s in specs], dtype=float)
    if np.any(kappa >= ds.n):
        raise DegenerateRSS("information criteria need n > k_m for every model")
    rss = np.array([np.sum((ds.y - f.fitted) ** 2) for f in fits])
    if which.upper() == "CP" and sigma2_hat is None:
        sigma2_hat = resolve_sigma2(ds, list(specs), fits, "largest_model")
    return ScoreVector(_scores(rss, kappa, ds.n, which, sigma2_hat), which.upper())


def scores_from_matrices(cm: CriterionMatrices, y, which: str) -> ScoreVector:
    y = np.asarray(y, dtype=float)
    rss = np.sum((y[:, None] - cm.omega_hat) ** 2, axis=0)
    return ScoreVector(_scores(rss, cm.kappa.astype(float), cm.n, which, cm.sigma2_hat),
                       which.upper())


def smoothed_weights(s) -> WeightVector:
    """``exp(-s_m / 2)`` normalized, computed relative to the smallest score."""
    s = np.asarray(getattr(s, "scores", s), dtype=float)
    e = np.exp(-0.5 * (s - s.min()))
    return WeightVector(e / e.sum(), "simplex")


def select_model(s) -> WeightVector:
    """Vertex weight on the lowest score; ties go to the first model."""
    s = np.asarray(getattr(s, "scores", s), dtype=float)
    w = np.zeros(s.size)
    w[int(np.argmin(s))] = 1.0
    return WeightVector(w, "vertex")


def compute_weights(config: CriterionConfig, cm: CriterionMatrices, y) -> WeightVector:
    """Weights for any method at a fixed penalty (no tuning)."""
    method = config.method
    if method == "RMMA":
        return rmma_weights(cm, y, config.lam)
    if method == "RJMA":
        return rjma_weights(cm, y, config.lam)
    if method == "MMA":
        return mma_weights(cm, y)
    if method == "JMA":
        return jma_weights(cm, y)
    if method == "GM":
        return gm_weights(cm, y)
    if method in ("SAIC", "SBIC"):
        return smoothed_weights(scores_from_matrices(cm, y, method[1:]))
    return select_model(scores_from_matrices(cm, y, method))
