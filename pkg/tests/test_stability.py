import numpy as np
import pytest

from conftest import nested
from ridgema.criteria import CriterionConfig, jackknife_gram, mallows_gram, rmma_weights
from ridgema.exceptions import SingularMoment
from ridgema.model_space import Dataset, ModelSpec, build_criterion_matrices, fit_models
from ridgema.stability import (
    GaussianLinearDgp,
    assumption_diagnostics,
    empirical_risk,
    gap_estimate,
    gap_estimates,
    oracle_weights,
    ridge_trace,
    risk,
)

THETA = np.array([1.0, 0.8, 0.5, 0.3, 0.2, 0.1])
DGP = GaussianLinearDgp(THETA, rho=0.3)
SPECS = nested(6, start=2)


class ZeroDgp:
    K = 3

    def sample(self, rng, size):
        return np.zeros((size, 3)), np.zeros(size)


def fitted_instance(seed, n=50, dgp=DGP, specs=SPECS):
    X, y = dgp.sample(np.random.default_rng(seed), n)
    ds = Dataset(X, y)
    fits = fit_models(ds, specs)
    return ds, fits, build_criterion_matrices(ds, specs, fits=fits)


# --- risk ----------------------------------------------------------------------

def test_risk_degenerate():
    ds, fits, _ = fitted_instance(0, specs=nested(3))
    est = risk(np.ones(3) / 3, nested(3), fits, ZeroDgp(), 100, 0)
    assert est.value == 0.0 and est.stderr == 0.0


def test_risk_zero_weights_is_second_moment():
    ds, fits, _ = fitted_instance(1)
    est = risk(np.zeros(len(SPECS)), SPECS, fits, DGP, 20_000, 2)
    _, y = DGP.sample(np.random.default_rng(2), 20_000)
    assert est.value == pytest.approx(np.mean(y ** 2), rel=1e-12)


@pytest.mark.parametrize("hetero", [False, True])
def test_risk_matches_analytic(hetero):
    dgp = GaussianLinearDgp(THETA, rho=0.4, sigma=0.7, hetero=hetero)
    ds, fits, cm = fitted_instance(3, dgp=dgp)
    w = rmma_weights(cm, ds.y, 1.0).w
    beta = sum(wm * np.bincount(s.indices, f.theta_hat, minlength=6)
               for wm, s, f in zip(w, SPECS, fits))
    est = risk(w, SPECS, fits, dgp, 200_000, 4)
    assert abs(est.value - dgp.risk(beta)) <= 3 * est.stderr


def test_empirical_risk(toy):
    cm = build_criterion_matrices(toy, [ModelSpec((0,))], 1.0)
    assert empirical_risk([1.0], cm, toy.y) == pytest.approx(5 / 4)
    assert empirical_risk([0.0], cm, toy.y) == pytest.approx(30 / 4)


def test_empirical_risk_minimizer():
    ds, _, cm = fitted_instance(5)
    w_tilde = np.linalg.solve(cm.omega_hat.T @ cm.omega_hat, cm.omega_hat.T @ ds.y)
    best = empirical_risk(w_tilde, cm, ds.y)
    probes = np.random.default_rng(6).normal(w_tilde, 0.5, (1000, cm.M))
    assert all(best <= empirical_risk(p, cm, ds.y) for p in probes)


# --- oracle weights -----------------------------------------------------------

def test_oracle_single_model_scalar():
    specs = [ModelSpec((0, 1, 2))]
    ds, fits, _ = fitted_instance(7, specs=specs)
    w = oracle_weights(specs, fits, DGP, 5000, 8).w
    X, y = DGP.sample(np.random.default_rng(8), 5000)
    g = X[:, [0, 1, 2]] @ fits[0].theta_hat
    assert w[0] == pytest.approx((g @ y) / (g @ g), rel=1e-12)


def test_oracle_true_model_gives_unit_weight():
    theta = np.array([0.5, 1.0, -0.7])
    dgp = GaussianLinearDgp(theta, rho=0.2)
    X = dgp.sample_X(np.random.default_rng(9), 40)
    ds = Dataset(X, X @ theta)  # noiseless fit recovers theta exactly
    specs = [ModelSpec((0, 1, 2))]
    fits = fit_models(ds, specs)
    n_mc = 100_000
    w = oracle_weights(specs, fits, dgp, n_mc, 10).w[0]
    Xs, ys = dgp.sample(np.random.default_rng(10), n_mc)
    g = Xs @ fits[0].theta_hat
    se = np.std(g * ys - w * g ** 2) / np.mean(g ** 2) / np.sqrt(n_mc)
    assert abs(w - 1.0) <= 3 * se


def test_oracle_duplicate_models():
    specs = [ModelSpec((0, 1)), ModelSpec((0, 1))]
    ds, fits, _ = fitted_instance(11, specs=specs)
    with pytest.raises(SingularMoment):
        oracle_weights(specs, fits, DGP, 1000, 0)


# --- gaps -------------------------------------------------------------------

def test_gap_report_fields():
    rep = gap_estimate("generalization", CriterionConfig("RMMA", 1.0), DGP, SPECS, 30, 10, 0,
                       n_mc=500)
    assert rep.gap_name == "generalization" and rep.replications == 10
    assert rep.mc_stderr >= 0 and rep.values.size == 10
    with pytest.raises(ValueError):
        gap_estimate("nope", CriterionConfig("RMMA"), DGP, SPECS, 30, 10, 0)
    with pytest.raises(ValueError):
        gap_estimate("ro", CriterionConfig("RMMA"), DGP, SPECS, 30, 1, 0)


def test_aerm_nonnegative_and_zero_without_penalty_terms():
    method = CriterionConfig("RMMA", 0.0)
    rep = gap_estimate("aerm", method, DGP, SPECS, 40, 20, 1, n_mc=100)
    assert np.all(rep.values >= -1e-12)
    assert rep.values.max() > 0
    rep0 = gap_estimate("aerm", method, DGP, SPECS, 40, 20, 1, n_mc=100, sigma2=1e-300)
    assert np.max(np.abs(rep0.values)) <= 1e-10


def test_shared_seed_streams():
    method = CriterionConfig("RJMA", 2.0)
    a = gap_estimate("generalization", method, DGP, SPECS, 30, 15, 5, n_mc=300)
    b = gap_estimates(["ro", "generalization"], method, DGP, SPECS, 30, 15, 5, n_mc=300)
    assert a.values.tobytes() == b["generalization"].values.tobytes()


@pytest.mark.parametrize("method", [CriterionConfig("RMMA", 5.0), CriterionConfig("MMA"),
                                    CriterionConfig("SAIC")])
def test_generalization_equals_ro(method):
    r = gap_estimates(["generalization", "ro"], method, DGP, SPECS, 40, 150, 13, n_mc=2000)
    g, ro = r["generalization"], r["ro"]
    assert abs(g.estimate - ro.estimate) <= 3 * np.hypot(g.mc_stderr, ro.mc_stderr)


def test_loo_relation_between_stabilities():
    method = CriterionConfig("RJMA", 5.0)
    r = gap_estimates(["ploo", "floo", "ro"], method, DGP, SPECS, 40, 150, 17, n_mc=2000)
    implied = r["floo"].estimate - r["ploo"].estimate
    se = np.sqrt(r["floo"].mc_stderr ** 2 + r["ploo"].mc_stderr ** 2 + r["ro"].mc_stderr ** 2)
    assert abs(implied - r["ro"].estimate) <= 3 * se


def test_full_averaging_flag():
    method = CriterionConfig("RMMA", 5.0)
    r = gap_estimate("floo", method, DGP, SPECS, 12, 5, 3, n_mc=200, full=True)
    assert r.replications == 5 and np.all(np.isfinite(r.values))


def test_floo_does_not_grow_with_n():
    method = CriterionConfig("RJMA", 5.0)
    a = gap_estimate("floo", method, DGP, SPECS, 100, 200, 21, n_mc=10)
    b = gap_estimate("floo", method, DGP, SPECS, 200, 200, 22, n_mc=10)
    assert abs(b.estimate) <= abs(a.estimate) + 3 * np.hypot(a.mc_stderr, b.mc_stderr)


def test_consistency_gap_nonnegative_on_average():
    r = gap_estimate("consistency", CriterionConfig("RMMA", 5.0), DGP, SPECS, 40, 30, 2,
                     n_mc=5000)
    assert r.estimate > -3 * r.mc_stderr


# --- ridge trace -----------------------------------------------------------------

def direct_M1(G, w0, w_star, lam):
    Z = np.linalg.solve(G + lam * np.eye(G.shape[0]), G)
    return np.sum((Z @ w0 - Z @ w_star) ** 2) + np.sum((Z @ w_star - w_star) ** 2)


@pytest.mark.parametrize("which", ["mallows", "jackknife"])
def test_trace_basics(which):
    ds, fits, cm = fitted_instance(30)
    lambdas = np.linspace(0, len(SPECS) * np.log(ds.n), 50)
    tr = ridge_trace(cm, ds.y, SPECS, fits, DGP, lambdas, 20_000, 31, which=which)
    assert tr.B[0] == 0
    assert tr.M1[0] == pytest.approx(np.sum((tr.w0 - tr.w_star) ** 2), rel=1e-10)
    np.testing.assert_array_equal(tr.M1, tr.V + tr.B)
    assert np.all(np.diff(tr.V) <= 1e-12 * tr.V[0])
    assert np.all(np.diff(tr.B) >= -1e-12)
    assert tr.lambda_hat > 0 and tr.M1_at_lambda_hat < tr.M1[0]
    G = (mallows_gram if which == "mallows" else jackknife_gram)(cm, ds.y)[0]
    for lam, m1 in zip(lambdas, tr.M1):
        assert abs(m1 - direct_M1(G, tr.w0, tr.w_star, lam)) <= 1e-8 * max(1.0, m1)


def test_trace_lambda_hat_is_stationary():
    ds, fits, cm = fitted_instance(32)
    lambdas = np.linspace(0, 5, 20)
    tr = ridge_trace(cm, ds.y, SPECS, fits, DGP, lambdas, 20_000, 33)
    G = mallows_gram(cm, ds.y)[0]
    h = 1e-6 * tr.lambda_hat
    left = direct_M1(G, tr.w0, tr.w_star, tr.lambda_hat - h)
    right = direct_M1(G, tr.w0, tr.w_star, tr.lambda_hat + h)
    assert left >= tr.M1_at_lambda_hat - 1e-9 and right >= tr.M1_at_lambda_hat - 1e-9


def test_trace_grid_validation():
    ds, fits, cm = fitted_instance(34)
    with pytest.raises(ValueError):
        ridge_trace(cm, ds.y, SPECS, fits, DGP, [1.0, 2.0], 100, 0)
    with pytest.raises(ValueError):
        ridge_trace(cm, ds.y, SPECS, fits, DGP, [0.0, 1.0], 100, 0, which="other")


def test_assumption_diagnostics():
    ds, _, cm = fitted_instance(35)
    d = assumption_diagnostics(ds, SPECS, cm)
    assert d["design_min_eig"] > 0 and d["omega_hat_min_eig"] > 0
    assert all(np.isfinite(v) for v in d.values())


def test_gaussian_dgp_second_moment():
    X, _ = DGP.sample(np.random.default_rng(36), 200_000)
    emp = X.T @ X / X.shape[0]
    np.testing.assert_allclose(emp, DGP.second_moment(), atol=0.02)
