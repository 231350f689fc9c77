"""Comparison learners: least squares, constant average and LAD."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

LSTSQ_RCOND = 1e-10
LAD_WEIGHT_FLOOR = 1e-8
LAD_MAX_ITER = 100
LAD_STEP_TOL = 1e-8


@dataclass(frozen=True)
class LinearModel:
    """Coefficients over a declared feature layout.

    ``layout`` names the construction the coefficients pair with, e.g.
    ``"physical-p"`` or ``"affine"``. ``converged`` is only meaningful for
    iterative fits.
    """

    beta: np.ndarray
    bias: float = 0.0
    layout: str = "generic"
    converged: bool = True
    objective_history: tuple = field(default=(), repr=False)

    def to_json(self) -> str:
        return json.dumps({"layout": self.layout, "bias": self.bias,
                           "beta": [float(b) for b in self.beta]}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "LinearModel":
        doc = json.loads(text)
        return cls(np.asarray(doc["beta"], dtype=float), float(doc.get("bias", 0.0)),
                   doc.get("layout", "generic"))


def _design(design, y):
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    if design.ndim != 2 or design.shape[0] == 0 or design.shape[1] == 0:
        raise ValueError(f"design matrix must be non-empty 2-D, got shape {design.shape}")
    if y.shape != (design.shape[0],):
        raise ValueError(f"target length {y.shape} does not match {design.shape[0]} rows")
    return design, y


def fit_least_squares(design, y, layout: str = "generic") -> LinearModel:
    """Minimum-norm least squares (singular values below 1e-10 * s_max dropped)."""
    design, y = _design(design, y)
    beta, *_ = np.linalg.lstsq(design, y, rcond=LSTSQ_RCOND)
    return LinearModel(beta, 0.0, layout)


def fit_average(y) -> LinearModel:
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("cannot average an empty target")
    return LinearModel(np.zeros(0), float(y.mean()), "constant")


def lad_objective(design, y, beta) -> float:
    return float(np.abs(y - design @ beta).sum())


def fit_lad(design, y, layout: str = "generic") -> LinearModel:
    """Least absolute deviations by iteratively reweighted least squares.

    Starts from the least-squares solution; weights are ``1/max(|r|, 1e-8)``.
    Returns the iterate with the smallest objective; ``converged`` is False
    if the step never fell below 1e-8 within 100 iterations.
    """
    design, y = _design(design, y)
    beta = np.linalg.lstsq(design, y, rcond=LSTSQ_RCOND)[0]
    best, best_obj = beta, lad_objective(design, y, beta)
    history = [best_obj]
    converged = False
    for _ in range(LAD_MAX_ITER):
        w = 1.0 / np.maximum(np.abs(y - design @ beta), LAD_WEIGHT_FLOOR)
        sw = np.sqrt(w)
        new = np.linalg.lstsq(design * sw[:, None], y * sw, rcond=LSTSQ_RCOND)[0]
        step = float(np.max(np.abs(new - beta)))
        beta = new
        obj = lad_objective(design, y, beta)
        history.append(obj)
        if obj < best_obj:
            best, best_obj = beta, obj
        if step < LAD_STEP_TOL:
            converged = True
            break
    return LinearModel(best, 0.0, layout, converged, tuple(history))


def predict_linear(model: LinearModel, features) -> np.ndarray:
    features = np.asarray(features, dtype=float)
    if features.shape[-1] != model.beta.shape[0]:
        raise ValueError(
            f"feature dimension {features.shape[-1]} does not match model ({model.beta.shape[0]})")
    return features @ model.beta + model.bias


class _LinearBase(RegressorMixin, BaseEstimator):
    def _fit_model(self, X, y):
        raise NotImplementedError

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if self.fit_intercept:
            X = np.hstack([np.ones((X.shape[0], 1)), X])
        self.model_ = self._fit_model(X, y)
        beta = self.model_.beta
        self.intercept_ = float(beta[0]) if self.fit_intercept else 0.0
        self.coef_ = beta[1:] if self.fit_intercept else beta
        self.n_features_in_ = self.coef_.shape[0]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        return X @ self.coef_ + self.intercept_


class LeastSquaresRegressor(_LinearBase):
    """Ordinary least squares; no intercept by default (physical layouts
    have none)."""

    def __init__(self, fit_intercept=False):
        self.fit_intercept = fit_intercept

    def _fit_model(self, X, y):
        return fit_least_squares(X, y)


class LADRegressor(_LinearBase):
    def __init__(self, fit_intercept=False):
        self.fit_intercept = fit_intercept

    def _fit_model(self, X, y):
        model = fit_lad(X, y)
        self.converged_ = model.converged
        return model


class AverageRegressor(RegressorMixin, BaseEstimator):
    """Predicts the training-target mean everywhere."""

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        self.model_ = fit_average(y)
        self.constant_ = self.model_.bias
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        return np.full(X.shape[0], self.constant_)
