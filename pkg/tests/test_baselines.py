import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridmap.baselines import (
    AverageRegressor,
    LADRegressor,
    LeastSquaresRegressor,
    LinearModel,
    fit_average,
    fit_lad,
    fit_least_squares,
    lad_objective,
    predict_linear,
)
from gridmap.features import physical_features, to_rectangular
from gridmap.grid import build_admittance, builtin_case, evaluate_injections_rect


def linear_problem(seed=0, T=60, d=5):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((T, d))
    beta = rng.standard_normal(d)
    return X, X @ beta, beta


def test_least_squares_recovers_generator():
    X, y, beta = linear_problem()
    fit = fit_least_squares(X, y)
    assert np.linalg.norm(fit.beta - beta) <= 1e-8 * np.linalg.norm(beta)


def test_least_squares_minimum_norm_on_duplicate_column():
    X, y, _ = linear_problem(1)
    Xd = np.hstack([X, X[:, :1]])
    fit = fit_least_squares(Xd, y)
    np.testing.assert_allclose(Xd @ fit.beta, y, atol=1e-10)
    assert fit.beta[0] == pytest.approx(fit.beta[-1])


def test_least_squares_is_optimal_under_perturbation():
    rng = np.random.default_rng(2)
    X, y, _ = linear_problem(2)
    y = y + 0.1 * rng.standard_normal(y.size)
    beta = fit_least_squares(X, y).beta
    base = np.sum((y - X @ beta) ** 2)
    for _ in range(50):
        step = rng.standard_normal(beta.size)
        step *= 1e-4 / np.linalg.norm(step)
        assert np.sum((y - X @ (beta + step)) ** 2) >= base
        assert np.sum((y - X @ (beta - step)) ** 2) >= base


def test_design_validation():
    with pytest.raises(ValueError):
        fit_least_squares(np.ones((3, 2)), np.ones(4))
    with pytest.raises(ValueError):
        fit_least_squares(np.ones((0, 2)), np.ones(0))
    with pytest.raises(ValueError):
        fit_average([])


def test_average_examples():
    assert fit_average([1, 1, 1]).bias == 1.0
    model = fit_average([0, 2])
    assert predict_linear(model, np.zeros((4, 0))).tolist() == [1.0] * 4


def test_lad_matches_ls_on_exact_data():
    X, y, beta = linear_problem(3)
    np.testing.assert_allclose(fit_lad(X, y).beta, beta, atol=1e-6)


@pytest.mark.xfail(strict=True, reason="LAD optimum is a whole interval [1, 100] here; "
                                       "IRLS returns an interior point")
def test_lad_three_point_example_is_not_unique():
    X, y = np.array([[1.0], [2.0], [3.0]]), np.array([1.0, 2.0, 300.0])
    assert abs(fit_lad(X, y).beta[0] - 1.0) < 1e-3


def test_lad_three_point_example_objective_and_ls():
    X, y = np.array([[1.0], [2.0], [3.0]]), np.array([1.0, 2.0, 300.0])
    ls = fit_least_squares(X, y).beta[0]
    assert ls == pytest.approx(905 / 14)
    assert abs(ls - 1.0) > 10
    lad = fit_lad(X, y)
    # brute-force 1-D scan of the objective
    grid = np.linspace(-10, 200, 210001)
    best = min(lad_objective(X, y, np.array([b])) for b in grid[::100])
    assert lad_objective(X, y, lad.beta) <= best + 1e-6


def test_lad_ignores_outlier_with_unique_optimum():
    X, y = np.array([[1.0], [2.0], [3.0], [4.0]]), np.array([1.0, 2.0, 3.0, 400.0])
    beta = fit_lad(X, y).beta[0]
    assert abs(beta - 1.0) < 1e-3
    assert abs(fit_least_squares(X, y).beta[0] - 1.0) > 10


def test_lad_objective_history_is_monotone_at_best():
    rng = np.random.default_rng(4)
    X, y, _ = linear_problem(4)
    y = y + rng.standard_t(2, y.size)
    model = fit_lad(X, y)
    assert model.objective_history
    assert lad_objective(X, y, model.beta) == pytest.approx(min(model.objective_history))
    hist = np.array(model.objective_history)
    assert np.all(np.diff(hist) <= 1e-12 * hist[:-1] + 1e-12)


def test_lad_duplication_invariance():
    rng = np.random.default_rng(5)
    X, y, _ = linear_problem(5, T=30, d=3)
    y = y + rng.laplace(size=y.size)
    a = fit_lad(X, y).beta
    b = fit_lad(np.vstack([X, X]), np.concatenate([y, y])).beta
    np.testing.assert_allclose(a, b, atol=1e-5)


def test_predict_linear_examples():
    model = LinearModel(np.zeros(3), bias=2.5)
    np.testing.assert_allclose(predict_linear(model, np.ones((2, 3))), 2.5)
    with pytest.raises(ValueError):
        predict_linear(model, np.ones((2, 4)))


def test_true_admittance_row_predicts_injection():
    Y = build_admittance(builtin_case())
    rng = np.random.default_rng(6)
    X = to_rectangular(rng.uniform(0.9, 1.1, (20, 8)), rng.uniform(-0.1, 0.1, (20, 8)))
    model = LinearModel(np.concatenate([Y.real[4], Y.imag[4]]), layout="physical-p")
    pred = predict_linear(model, physical_features(X, 4, "p"))
    actual = np.array([evaluate_injections_rect(Y, x)[0][4] for x in X])
    np.testing.assert_allclose(pred, actual, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(alpha=st.floats(-10, 10))
def test_prediction_is_linear_in_features(alpha):
    model = LinearModel(np.array([0.5, -1.0, 2.0]))
    F = np.array([[1.0, 2.0, 3.0], [0.1, -0.2, 0.3]])
    np.testing.assert_allclose(predict_linear(model, alpha * F),
                               alpha * predict_linear(model, F), atol=1e-9)


def test_model_json_round_trip():
    model = LinearModel(np.array([1.0, -2.0]), 0.5, "affine")
    back = LinearModel.from_json(model.to_json())
    assert back.layout == "affine" and back.bias == 0.5
    np.testing.assert_array_equal(back.beta, model.beta)


def test_sklearn_wrappers():
    X, y, beta = linear_problem(7)
    ls = LeastSquaresRegressor(fit_intercept=True).fit(X, y + 3.0)
    assert ls.intercept_ == pytest.approx(3.0)
    np.testing.assert_allclose(ls.coef_, beta, atol=1e-8)
    assert ls.score(X, y + 3.0) == pytest.approx(1.0)
    lad = LADRegressor().fit(X, y)
    np.testing.assert_allclose(lad.predict(X), y, atol=1e-5)
    avg = AverageRegressor().fit(X, y)
    np.testing.assert_allclose(avg.predict(X[:3]), y.mean())
