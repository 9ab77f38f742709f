import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import nested, ols_predict, random_dataset
from ridgema.exceptions import (
    DegenerateVariance,
    DimensionMismatch,
    LeverageOverflow,
    SingularDesign,
)
from ridgema.model_space import (
    Dataset,
    ModelSpec,
    build_criterion_matrices,
    fit_models,
    fit_ols,
    largest_model_index,
    model_average_prediction,
)


def test_dataset_validation():
    with pytest.raises(DimensionMismatch):
        Dataset(np.ones((3, 2)), np.ones(4))
    with pytest.raises(ValueError):
        Dataset(np.array([[1.0], [np.nan]]), np.ones(2))
    ds = Dataset(np.arange(3.0), np.ones(3))
    assert (ds.n, ds.K) == (3, 1)


def test_modelspec_validation():
    with pytest.raises(ValueError):
        ModelSpec(())
    with pytest.raises(ValueError):
        ModelSpec((0, 0))
    with pytest.raises(ValueError):
        ModelSpec((-1,))
    assert ModelSpec([2, 0]).k == 2


def test_intercept_only_fit(toy):
    f = fit_ols(toy, ModelSpec((0,)))
    np.testing.assert_allclose(f.theta_hat, [2.5])
    np.testing.assert_allclose(f.fitted, [2.5] * 4)
    np.testing.assert_allclose(f.hat_diag, [0.25] * 4)
    np.testing.assert_allclose(f.loo_fitted, [3, 8 / 3, 7 / 3, 2], atol=1e-14)


def test_loo_matches_refit(rng):
    ds = random_dataset(rng, 30, 5)
    spec = ModelSpec((0, 1, 2))
    f = fit_ols(ds, spec)
    Xm = ds.X[:, spec.indices]
    brute = np.array([
        ols_predict(np.delete(Xm, i, 0), np.delete(ds.y, i), Xm[i:i + 1])[0]
        for i in range(ds.n)
    ])
    assert np.max(np.abs(f.loo_fitted - brute)) <= 1e-9


def test_hat_diag_properties(rng):
    ds = random_dataset(rng, 25, 6)
    for spec, f in zip(nested(6), fit_models(ds, nested(6))):
        assert np.all(f.hat_diag >= 0) and np.all(f.hat_diag < 1)
        assert abs(f.hat_diag.sum() - spec.k) <= 1e-8
        np.testing.assert_array_equal(f.fitted, ds.X[:, spec.indices] @ f.theta_hat)


def test_singular_design_reports_index():
    X = np.column_stack([np.ones(5), np.arange(5.0), 2 * np.arange(5.0)])
    ds = Dataset(X, np.arange(5.0) ** 2)
    with pytest.raises(SingularDesign) as err:
        fit_models(ds, [ModelSpec((0,)), ModelSpec((0, 1, 2))])
    assert err.value.model_index == 1


def test_leverage_overflow():
    X = np.column_stack([np.ones(4), [0.0, 0.0, 0.0, 1.0]])
    with pytest.raises(LeverageOverflow):
        fit_ols(Dataset(X, np.arange(4.0)), ModelSpec((0, 1)))


def test_criterion_matrices_toy(toy):
    cm = build_criterion_matrices(toy, [ModelSpec((0,))], 1.0)
    np.testing.assert_allclose(cm.omega_hat[:, 0], [2.5] * 4)
    assert cm.kappa.tolist() == [1]
    assert cm.sigma2_hat == 1.0


def test_criterion_matrix_columns(rng):
    ds = random_dataset(rng, 50, 4)
    specs = [ModelSpec((0, 1)), ModelSpec((0, 1, 2, 3))]
    cm = build_criterion_matrices(ds, specs)
    np.testing.assert_array_equal(cm.omega_hat[:, 0], fit_ols(ds, specs[0]).fitted)
    np.testing.assert_array_equal(cm.omega_bar[:, 1], fit_ols(ds, specs[1]).loo_fitted)


def test_sigma2_largest_model(rng):
    ds = random_dataset(rng, 40, 6)
    specs = [ModelSpec((0, 1)), ModelSpec(tuple(range(6))), ModelSpec((0, 2, 4))]
    cm = build_criterion_matrices(ds, specs)
    beta = np.linalg.lstsq(ds.X, ds.y, rcond=None)[0]
    resid = ds.y - ds.X @ beta
    assert cm.sigma2_hat == pytest.approx(resid @ resid / (40 - 6), rel=1e-12)


def test_largest_model_tie_goes_last():
    specs = [ModelSpec((0, 1)), ModelSpec((0, 2)), ModelSpec((0,))]
    assert largest_model_index(specs) == 1


def test_degenerate_variance():
    ds = Dataset(np.column_stack([np.ones(2), [0.0, 1.0]]), np.array([1.0, 3.0]))
    with pytest.raises((DegenerateVariance, LeverageOverflow)):
        build_criterion_matrices(ds, [ModelSpec((0, 1))])
    with pytest.raises(DegenerateVariance):
        build_criterion_matrices(ds, [ModelSpec((0,))], sigma2_policy=-1.0)


def test_gram_entries(rng):
    ds = random_dataset(rng, 35, 5)
    specs = nested(5, start=2)
    cm = build_criterion_matrices(ds, specs)
    G = cm.omega_hat.T @ cm.omega_hat
    assert np.allclose(G, G.T)
    assert np.linalg.eigvalsh(G).min() >= -1e-8 * np.abs(G).max()
    for m, sm in enumerate(specs):
        Xm = ds.X[:, sm.indices]
        Pm = Xm @ np.linalg.pinv(Xm)
        for t, stt in enumerate(specs):
            Xt = ds.X[:, stt.indices]
            Pt = Xt @ np.linalg.pinv(Xt)
            ref = ds.y @ Pm @ Pt @ ds.y
            assert abs(G[m, t] - ref) <= 1e-8 * abs(ref)


def test_model_average_prediction(rng):
    ds = random_dataset(rng, 30, 4)
    specs = [ModelSpec((0, 1)), ModelSpec((0, 1, 2, 3))]
    fits = fit_models(ds, specs)
    x = rng.standard_normal(4)
    p = [x[list(s.indices)] @ np.linalg.lstsq(ds.X[:, s.indices], ds.y, rcond=None)[0]
         for s in specs]
    got = model_average_prediction(specs, fits, [0.3, 0.7], x)
    assert abs(got - (0.3 * p[0] + 0.7 * p[1])) <= 1e-12
    assert model_average_prediction(specs, fits, [0.0, 0.0], x) == 0.0
    assert model_average_prediction(specs[:1], fits[:1], [1.0], x) == pytest.approx(p[0])
    with pytest.raises(DimensionMismatch):
        model_average_prediction(specs, fits, [1.0], x)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), perm_seed=st.integers(0, 1000))
def test_fitted_invariant_to_index_order(seed, perm_seed):
    ds = random_dataset(np.random.default_rng(seed), 20, 5)
    idx = np.random.default_rng(perm_seed).permutation(5)
    a = fit_ols(ds, ModelSpec(tuple(range(5))))
    b = fit_ols(ds, ModelSpec(tuple(idx)))
    np.testing.assert_allclose(a.fitted, b.fitted, atol=1e-10)
    np.testing.assert_allclose(a.loo_fitted, b.loo_fitted, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(8, 40))
def test_leverage_bounds_property(seed, n):
    ds = random_dataset(np.random.default_rng(seed), n, 4)
    for spec, f in zip(nested(4), fit_models(ds, nested(4))):
        assert np.all((f.hat_diag >= 0) & (f.hat_diag < 1))
        assert abs(f.hat_diag.sum() - spec.k) <= 1e-8
