import numpy as np
import pytest

from conftest import nested, random_dataset
from oracles import straight_line_tuning_average
from ridgema.criteria import CriterionConfig, compute_weights
from ridgema.model_space import ModelSpec, build_criterion_matrices
from ridgema.tuning import (
    TuningConfig,
    tuning_average,
    combination_coefficients,
    kfold_partition,
    lambda_grid,
    ridge_path,
)


@pytest.mark.parametrize("n,folds,sizes", [
    (10, 10, [1] * 10),
    (100, 10, [10] * 10),
    (103, 10, [11] * 3 + [10] * 7),
])
def test_kfold_sizes(n, folds, sizes):
    parts = kfold_partition(n, folds, seed=3)
    assert [p.size for p in parts] == sizes
    assert np.array_equal(np.sort(np.concatenate(parts)), np.arange(n))


def test_kfold_deterministic():
    a, b = kfold_partition(57, 5, 11), kfold_partition(57, 5, 11)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    with pytest.raises(ValueError):
        kfold_partition(3, 4, 0)


def test_lambda_grid():
    g = lambda_grid(5, 80, 100)
    assert g[0] == 0 and g.size == 100
    assert g[-1] == pytest.approx(5 * np.log(80))
    np.testing.assert_allclose(np.diff(g), 5 * np.log(80) / 99)
    assert lambda_grid(3, 10, 1).tolist() == [0.0]


def test_config_validation():
    with pytest.raises(ValueError):
        TuningConfig(keep=101)
    with pytest.raises(ValueError):
        TuningConfig(folds=1)
    with pytest.raises(ValueError):
        TuningConfig(criterion="MMA")
    assert TuningConfig(criterion="rj").criterion == "RJMA"


def test_ridge_path_matches_solve():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((20, 4))
    G, r = A.T @ A, rng.standard_normal(4)
    lams = np.linspace(0, 10, 7)
    W = ridge_path(G, r, lams)
    for lam, w in zip(lams, W):
        np.testing.assert_allclose(w, np.linalg.solve(G + lam * np.eye(4), r), rtol=1e-10)


def test_combination_coefficients():
    e = np.array([3.0, 1.0, 2.0, 10.0])
    kept = np.array([0, 1, 2])
    c = combination_coefficients(e, kept)
    assert abs(c.sum() - 1) <= 1e-12 and np.all(c >= 0)
    np.testing.assert_allclose(combination_coefficients(e + 1e4, kept), c, atol=1e-12)
    ref = np.exp(-0.5 * e[kept])
    np.testing.assert_allclose(c, ref / ref.sum(), rtol=1e-12)


def test_equal_errors_keep_first_and_uniform(monkeypatch):
    import ridgema.tuning as tuning

    monkeypatch.setattr(tuning, "_cv_errors", lambda ds, specs, cfg, folds: np.full(cfg.grid_size, 5.0))
    ds = random_dataset(np.random.default_rng(1), 40, 3)
    tr = tuning_average(ds, nested(3), TuningConfig())
    assert tr.kept.tolist() == list(range(50))
    np.testing.assert_allclose(tr.coefficients, 1 / 50, rtol=1e-12)


def test_single_model():
    ds = random_dataset(np.random.default_rng(2), 40, 2)
    tr = tuning_average(ds, [ModelSpec((0, 1))], TuningConfig(seed=4))
    assert tr.final_weights.w.shape == (1,)
    assert abs(tr.coefficients.sum() - 1) <= 1e-12
    assert tr.final_weights.w[0] == pytest.approx(tr.coefficients @ tr.candidate_weights[:, 0])


@pytest.mark.parametrize("criterion", ["RMMA", "RJMA"])
def test_grid_of_one_is_plain_criterion(criterion):
    ds = random_dataset(np.random.default_rng(3), 50, 4)
    specs = nested(4)
    tr = tuning_average(ds, specs, TuningConfig(grid_size=1, keep=1, criterion=criterion))
    cm = build_criterion_matrices(ds, specs)
    ref = compute_weights(CriterionConfig(criterion, 0.0), cm, ds.y).w
    np.testing.assert_allclose(tr.final_weights.w, ref, rtol=1e-10, atol=1e-12)


def test_trace_invariants():
    ds = random_dataset(np.random.default_rng(5), 60, 4)
    tr = tuning_average(ds, nested(4), TuningConfig(seed=8))
    assert tr.lambdas.size == 100 and tr.kept.size == 50
    assert np.all(tr.cv_errors >= 0)
    # kept are exactly the 50 smallest errors
    assert tr.cv_errors[tr.kept].max() <= np.delete(tr.cv_errors, tr.kept).min()


def test_deterministic():
    ds = random_dataset(np.random.default_rng(6), 60, 4)
    a = tuning_average(ds, nested(4), TuningConfig(seed=9))
    b = tuning_average(ds, nested(4), TuningConfig(seed=9))
    assert a.final_weights.w.tobytes() == b.final_weights.w.tobytes()
    assert a.cv_errors.tobytes() == b.cv_errors.tobytes()


@pytest.mark.parametrize("criterion", ["RMMA", "RJMA"])
def test_matches_straight_line_oracle(criterion):
    rng = np.random.default_rng(7)
    ds = random_dataset(rng, 60, 3)
    specs = nested(3)
    folds = kfold_partition(60, 10, 123)
    tr = tuning_average(ds, specs, TuningConfig(criterion=criterion), partition=folds)
    ref, errors, kept, _ = straight_line_tuning_average(ds.X, ds.y, [s.indices for s in specs],
                                                     folds, criterion)
    np.testing.assert_allclose(tr.cv_errors, errors, rtol=1e-9)
    assert tr.kept.tolist() == kept.tolist()
    assert np.max(np.abs(tr.final_weights.w - ref)) <= 1e-8
