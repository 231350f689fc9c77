"""Epsilon-insensitive support vector regression.

The dual is solved over ``2T`` box-constrained variables
``a = [a_plus; a_minus]`` with labels ``s = [+1; -1]``::

    min  0.5 a'Qa + p'a   s.t.  s'a = 0,  0 <= a <= C
    Q_kl = s_k s_l K(x_k mod T, x_l mod T),   p = [eps - y; eps + y]

by pairwise updates (maximal-violation first index, second-order choice of
the partner) until the violation gap drops below ``kkt_tol``. The signed
coefficient of sample t is ``a_plus[t] - a_minus[t]``.

Inputs and targets are standardized at fit time, so ``C`` and ``epsilon``
are expressed in standardized target units. ``standardize="whiten"``
additionally rotates the inputs onto their principal axes (each again with
zero mean and unit variance, null directions dropped); polynomial kernels
span the same functions either way, but the dual is far better
conditioned when inputs are strongly correlated.
"""

from __future__ import annotations

import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numba
import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

KERNEL_KINDS = ("polynomial", "rbf", "linear")
TAU = 1e-12


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "polynomial"
    degree: int = 2
    c: float = 1.0
    gamma: float | None = None

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"kernel kind must be one of {KERNEL_KINDS}, got {self.kind!r}")
        if self.kind == "polynomial":
            if int(self.degree) != self.degree or self.degree < 1:
                raise ValueError("polynomial degree must be an integer >= 1")
            if self.c < 0:
                raise ValueError("polynomial offset c must be >= 0")
        if self.kind == "rbf" and self.gamma is not None and not self.gamma > 0:
            raise ValueError("rbf gamma must be > 0")

    @property
    def label(self) -> str:
        if self.kind == "polynomial":
            return f"poly{self.degree}"
        return self.kind

    def resolved(self, n_features: int) -> "KernelSpec":
        if self.kind == "rbf" and self.gamma is None:
            return replace(self, gamma=1.0 / max(n_features, 1))
        return self


def quadratic_kernel(c: float = 1.0) -> KernelSpec:
    return KernelSpec("polynomial", 2, c)


@dataclass(frozen=True)
class SvrConfig:
    C: float = 1.0
    epsilon: float = 1e-3
    kernel: KernelSpec = field(default_factory=KernelSpec)
    kkt_tol: float = 1e-6
    max_passes: int = 200

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be > 0")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if not self.kkt_tol > 0:
            raise ValueError("kkt_tol must be > 0")


@dataclass(frozen=True)
class SvrModel:
    """Fitted model. ``alphas`` has one signed entry per training sample;
    only the support rows of the standardized inputs are retained."""

    alphas: np.ndarray
    bias: float
    support: np.ndarray
    support_inputs: np.ndarray
    kernel: KernelSpec
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    y_scale: float
    C: float
    epsilon: float
    converged: bool = True
    n_iter: int = 0
    dual_objective: float = 0.0
    x_rotation: np.ndarray | None = None

    @property
    def support_alphas(self):
        return self.alphas[self.support]

    def transform_inputs(self, X) -> np.ndarray:
        """Raw inputs -> the standardized space the kernel is evaluated in."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.x_mean.shape[0]:
            raise ValueError(f"expected {self.x_mean.shape[0]} features, got {X.shape[1]}")
        Z = (X - self.x_mean) / self.x_scale
        return Z if self.x_rotation is None else Z @ self.x_rotation


    def to_json(self) -> str:
        doc = {
            "kernel": asdict(self.kernel),
            "C": self.C,
            "epsilon": self.epsilon,
            "bias": self.bias,
            "x_mean": self.x_mean.tolist(),
            "x_scale": self.x_scale.tolist(),
            "x_rotation": None if self.x_rotation is None else self.x_rotation.tolist(),
            "y_mean": self.y_mean,
            "y_scale": self.y_scale,
            "n_samples": int(self.alphas.size),
            "support": self.support.tolist(),
            "support_alphas": self.support_alphas.tolist(),
            "support_inputs": self.support_inputs.tolist(),
            "converged": self.converged,
            "n_iter": self.n_iter,
            "dual_objective": self.dual_objective,
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SvrModel":
        doc = json.loads(text)
        support = np.asarray(doc["support"], dtype=int)
        alphas = np.zeros(int(doc["n_samples"]))
        alphas[support] = doc["support_alphas"]
        rotation = doc.get("x_rotation")
        rotation = None if rotation is None else np.asarray(rotation, dtype=float)
        d = len(doc["x_mean"]) if rotation is None else rotation.shape[1]
        return cls(
            alphas=alphas,
            bias=float(doc["bias"]),
            support=support,
            support_inputs=np.asarray(doc["support_inputs"], dtype=float).reshape(-1, d),
            kernel=KernelSpec(**doc["kernel"]),
            x_mean=np.asarray(doc["x_mean"], dtype=float),
            x_scale=np.asarray(doc["x_scale"], dtype=float),
            y_mean=float(doc["y_mean"]),
            y_scale=float(doc["y_scale"]),
            C=float(doc["C"]),
            epsilon=float(doc["epsilon"]),
            converged=bool(doc["converged"]),
            n_iter=int(doc["n_iter"]),
            dual_objective=float(doc["dual_objective"]),
            x_rotation=rotation,
        )


# --------------------------------------------------------------------------
# kernels

def kernel_matrix(spec: KernelSpec, A, B) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if spec.kind == "rbf":
        if spec.gamma is None:
            raise ValueError("rbf kernel needs a resolved gamma")
        sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
        return np.exp(-spec.gamma * np.maximum(sq, 0.0))
    G = A @ B.T
    if spec.kind == "linear":
        return G
    return (G + spec.c) ** spec.degree


def kernel_eval(spec: KernelSpec, x1, x2) -> float:
    x1 = np.asarray(x1, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x1.shape != x2.shape:
        raise ValueError(f"dimension mismatch: {x1.shape} vs {x2.shape}")
    if spec.kind == "rbf":
        if spec.gamma is None:
            raise ValueError("rbf kernel needs a resolved gamma")
        diff = x1 - x2
        return float(np.exp(-spec.gamma * diff @ diff))
    dot = float(x1 @ x2)
    if spec.kind == "linear":
        return dot
    return float((dot + spec.c) ** spec.degree)


# --------------------------------------------------------------------------
# solver

@numba.njit(cache=True, nogil=True)
def _reconstruct(K, y, eps, a, G):
    T = y.shape[0]
    beta = a[:T] - a[T:]
    Kb = K @ beta
    for t in range(T):
        G[t] = Kb[t] + eps - y[t]
        G[T + t] = -Kb[t] + eps + y[t]


@numba.njit(cache=True, nogil=True)
def _smo(K, y, C, eps, tol, max_iter, beta0):
    T = y.shape[0]
    L = 2 * T
    s = np.empty(L)
    a = np.zeros(L)
    G = np.empty(L)
    diag = np.empty(T)
    for t in range(T):
        s[t] = 1.0
        s[T + t] = -1.0
        if beta0[t] > 0:
            a[t] = beta0[t]
        elif beta0[t] < 0:
            a[T + t] = -beta0[t]
        diag[t] = K[t, t]
    _reconstruct(K, y, eps, a, G)

    it = 0
    converged = False
    while it < max_iter:
        # first index: maximal violation over the "up" set
        gmax = -np.inf
        i = -1
        for k in range(T):
            if a[k] < C and -G[k] >= gmax:
                gmax = -G[k]
                i = k
        for k in range(T, L):
            if a[k] > 0 and G[k] >= gmax:
                gmax = G[k]
                i = k
        if i < 0:
            converged = True
            break
        ti = i - T if i >= T else i
        Ki = K[ti]
        Kii = diag[ti]
        # partner: second-order gain over the "low" set
        gmax2 = -np.inf
        j = -1
        best = np.inf
        for k in range(T):
            if a[k] > 0:
                if G[k] >= gmax2:
                    gmax2 = G[k]
                diff = gmax + G[k]
                if diff > 0:
                    quad = Kii + diag[k] - 2.0 * Ki[k]
                    if quad <= 0:
                        quad = TAU
                    gain = -(diff * diff) / quad
                    if gain <= best:
                        best = gain
                        j = k
        for k in range(T, L):
            if a[k] < C:
                tk = k - T
                if -G[k] >= gmax2:
                    gmax2 = -G[k]
                diff = gmax - G[k]
                if diff > 0:
                    quad = Kii + diag[tk] - 2.0 * Ki[tk]
                    if quad <= 0:
                        quad = TAU
                    gain = -(diff * diff) / quad
                    if gain <= best:
                        best = gain
                        j = k
        if gmax + gmax2 < tol or j < 0:
            converged = True
            break

        tj = j - T if j >= T else j
        Kj = K[tj]
        Qij = s[i] * s[j] * Ki[tj]
        ai_old = a[i]
        aj_old = a[j]
        if s[i] != s[j]:
            quad = Kii + diag[tj] + 2.0 * Qij
            if quad <= 0:
                quad = TAU
            delta = (-G[i] - G[j]) / quad
            diff = a[i] - a[j]
            a[i] += delta
            a[j] += delta
            if diff > 0:
                if a[j] < 0:
                    a[j] = 0.0
                    a[i] = diff
            else:
                if a[i] < 0:
                    a[i] = 0.0
                    a[j] = -diff
            if diff > 0:
                if a[i] > C:
                    a[i] = C
                    a[j] = C - diff
            else:
                if a[j] > C:
                    a[j] = C
                    a[i] = C + diff
        else:
            quad = Kii + diag[tj] - 2.0 * Qij
            if quad <= 0:
                quad = TAU
            delta = (G[i] - G[j]) / quad
            total = a[i] + a[j]
            a[i] -= delta
            a[j] += delta
            if total > C:
                if a[i] > C:
                    a[i] = C
                    a[j] = total - C
            else:
                if a[j] < 0:
                    a[j] = 0.0
                    a[i] = total
            if total > C:
                if a[j] > C:
                    a[j] = C
                    a[i] = total - C
            else:
                if a[i] < 0:
                    a[i] = 0.0
                    a[j] = total

        dai = (a[i] - ai_old) * s[i]
        daj = (a[j] - aj_old) * s[j]
        for t in range(T):
            dg = Ki[t] * dai + Kj[t] * daj
            G[t] += dg
            G[T + t] -= dg
        it += 1

    # bias from free variables, else midpoint of the feasible interval
    n_free = 0
    total_free = 0.0
    ub = np.inf
    lb = -np.inf
    for k in range(L):
        yG = s[k] * G[k]
        if a[k] >= C:
            if s[k] < 0:
                ub = min(ub, yG)
            else:
                lb = max(lb, yG)
        elif a[k] <= 0:
            if s[k] > 0:
                ub = min(ub, yG)
            else:
                lb = max(lb, yG)
        else:
            n_free += 1
            total_free += yG
    if n_free > 0:
        rho = total_free / n_free
    elif np.isfinite(ub) and np.isfinite(lb):
        rho = 0.5 * (ub + lb)
    elif np.isfinite(ub):
        rho = ub
    elif np.isfinite(lb):
        rho = lb
    else:
        rho = 0.0

    alpha = a[:T] - a[T:]
    return alpha, -rho, it, converged


def dual_objective_value(K, y, alpha, epsilon) -> float:
    """``0.5 a'Ka - y'a + eps * |a|_1`` (minimisation form)."""
    return float(0.5 * alpha @ K @ alpha - y @ alpha + epsilon * np.abs(alpha).sum())


def primal_objective_value(K, y, alpha, bias, C, epsilon) -> float:
    f = K @ alpha + bias
    slack = np.maximum(np.abs(y - f) - epsilon, 0.0)
    return float(0.5 * alpha @ K @ alpha + C * slack.sum())


SCALING_MODES = (True, False, None, "standard", "whiten")
_NULL_DIRECTION = 1e-12


def _standardizer(X, y, mode):
    if mode not in SCALING_MODES:
        raise ValueError(f"standardize must be one of {SCALING_MODES}, got {mode!r}")
    d = X.shape[1]
    if not mode:
        return np.zeros(d), np.ones(d), None, 0.0, 1.0
    x_mean = X.mean(axis=0)
    x_scale = X.std(axis=0)
    x_scale = np.where(x_scale > 0, x_scale, 1.0)
    rotation = None
    if mode == "whiten":
        Z = (X - x_mean) / x_scale
        lam, vec = np.linalg.eigh(Z.T @ Z / Z.shape[0])
        keep = lam > _NULL_DIRECTION * max(lam.max(), 1.0)
        if not keep.any():
            keep = lam >= lam.max()
        # descending variance, deterministic sign
        order = np.argsort(-lam[keep], kind="stable")
        vec = vec[:, keep][:, order]
        lam = lam[keep][order]
        vec = vec * np.where(vec[np.abs(vec).argmax(axis=0), range(vec.shape[1])] < 0, -1.0, 1.0)
        rotation = vec / np.sqrt(np.where(lam > 0, lam, 1.0))
    y_mean = float(y.mean())
    y_scale = float(y.std())
    return x_mean, x_scale, rotation, y_mean, (y_scale if y_scale > 0 else 1.0)


def _prepare(X, y, kernel: KernelSpec, standardize=True):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"X must be 2-D, got shape {X.shape}")
    if y.shape != (X.shape[0],):
        raise ValueError("y length does not match X rows")
    if X.shape[0] < 2:
        raise ValueError("need at least two samples")
    x_mean, x_scale, rotation, y_mean, y_scale = _standardizer(X, y, standardize)
    Xs = (X - x_mean) / x_scale
    if rotation is not None:
        Xs = Xs @ rotation
    ys = (y - y_mean) / y_scale
    kernel = kernel.resolved(Xs.shape[1])
    K = np.ascontiguousarray(kernel_matrix(kernel, Xs, Xs))
    return Xs, ys, K, kernel, (x_mean, x_scale, rotation, y_mean, y_scale)


def _solve(prepared, config: SvrConfig, init=None, warn: bool = True) -> SvrModel:
    Xs, ys, K, kernel, (x_mean, x_scale, rotation, y_mean, y_scale) = prepared
    T = ys.shape[0]
    if init is None:
        beta0 = np.zeros(T)
    else:
        beta0 = np.asarray(init, dtype=float)
        if beta0.shape != (T,) or np.abs(beta0).max(initial=0.0) > config.C \
                or abs(beta0.sum()) > 1e-8:
            raise ValueError("initial coefficients are not dual-feasible")
    max_iter = int(config.max_passes) * 2 * T
    alpha, bias, n_iter, converged = _smo(K, ys, float(config.C), float(config.epsilon),
                                          float(config.kkt_tol), max_iter, beta0)
    if warn and not converged:
        warnings.warn(f"SMO stopped after {n_iter} updates without reaching kkt_tol",
                      ConvergenceWarning, stacklevel=3)
    support = np.flatnonzero(alpha != 0.0)
    return SvrModel(
        alphas=alpha,
        bias=float(bias),
        support=support,
        support_inputs=Xs[support].copy(),
        kernel=kernel,
        x_mean=x_mean,
        x_scale=x_scale,
        y_mean=y_mean,
        y_scale=y_scale,
        C=float(config.C),
        epsilon=float(config.epsilon),
        converged=bool(converged),
        n_iter=int(n_iter),
        dual_objective=dual_objective_value(K, ys, alpha, config.epsilon),
        x_rotation=rotation,
    )


def fit_svr(X, y, config: SvrConfig = SvrConfig(), standardize=True,
            init=None) -> SvrModel:
    """Fit the dual problem; see the module docstring for the formulation.

    ``init`` optionally warm-starts the solver from signed coefficients in
    standardized units (e.g. ``model.alphas`` of a fit with smaller C).
    ``standardize`` is ``True``/``"standard"`` (per-feature), ``"whiten"``
    or ``False`` (raw inputs and targets).
    """
    return _solve(_prepare(X, y, config.kernel, standardize), config, init)


def decision_function(model: SvrModel, X) -> np.ndarray:
    """Prediction in standardized target units."""
    Xs = model.transform_inputs(X)
    if model.support.size == 0:
        return np.full(X.shape[0], model.bias)
    return kernel_matrix(model.kernel, Xs, model.support_inputs) @ model.support_alphas + model.bias


def predict_svr(model: SvrModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    out = decision_function(model, X) * model.y_scale + model.y_mean
    return out[0] if X.ndim == 1 else out


def support_vectors(model: SvrModel) -> np.ndarray:
    return model.support.copy()


def kkt_residual_violation(model: SvrModel, X, y) -> float:
    """Largest violation of the three-case residual conditions (standardized units)."""
    ys = (np.asarray(y, dtype=float) - model.y_mean) / model.y_scale
    r = ys - decision_function(model, X)
    a = np.abs(model.alphas)
    eps = model.epsilon
    at_zero = a == 0
    at_bound = a >= model.C
    free = ~at_zero & ~at_bound
    viol = np.zeros_like(r)
    viol[at_zero] = np.maximum(np.abs(r[at_zero]) - eps, 0.0)
    viol[at_bound] = np.maximum(eps - np.abs(r[at_bound]), 0.0)
    # free coefficients sit on the tube edge on the side given by their sign
    viol[free] = np.abs(r[free] - np.sign(model.alphas[free]) * eps)
    return float(viol.max()) if viol.size else 0.0


# --------------------------------------------------------------------------
# cross-validation

def default_grid(kernel: KernelSpec | None = None, Cs=(0.1, 1.0, 10.0, 100.0),
                 epsilons=(1e-4, 1e-3, 1e-2)) -> list:
    kernel = kernel or quadratic_kernel()
    return [SvrConfig(C=C, epsilon=e, kernel=kernel) for C in Cs for e in epsilons]


def contiguous_folds(T: int, k: int):
    edges = np.linspace(0, T, k + 1).round().astype(int)
    return [np.arange(edges[f], edges[f + 1]) for f in range(k)]


def _threads():
    try:
        return max(1, int(os.environ.get("GRIDMAP_THREADS", "1")))
    except ValueError:
        return 1


CV_SCORES = {
    "rmse": lambda r: float(np.sqrt(np.mean(r ** 2))),
    "mae": lambda r: float(np.mean(np.abs(r))),
    # robust to corrupted validation samples
    "median": lambda r: float(np.median(np.abs(r))),
}


def cross_validate(X, y, k: int = 5, grid=None, standardize=True, scoring: str = "rmse"):
    """Contiguous k-fold selection of an :class:`SvrConfig`.

    Returns ``(best_config, scores)`` where ``scores[g]`` is the mean over
    folds of the validation ``scoring`` (RMSE by default; ``"mae"`` and
    ``"median"`` absolute error are also available) of ``grid[g]``. Ties go
    to smaller C, then smaller epsilon, then grid order.
    """
    if scoring not in CV_SCORES:
        raise ValueError(f"scoring must be one of {sorted(CV_SCORES)}, got {scoring!r}")
    score = CV_SCORES[scoring]
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    grid = list(default_grid() if grid is None else grid)
    if not grid:
        raise ValueError("empty configuration grid")
    if k < 2 or X.shape[0] < k:
        raise ValueError("need k >= 2 and at least k samples")
    folds = contiguous_folds(X.shape[0], k)
    all_idx = np.arange(X.shape[0])
    # configs sharing a kernel reuse one Gram matrix per fold and are
    # solved in ascending C, each warm-started from the previous solution
    chains = {}
    for g, cfg in enumerate(grid):
        chains.setdefault(cfg.kernel, []).append(g)
    for members in chains.values():
        members.sort(key=lambda g: (grid[g].C, grid[g].epsilon, g))

    def fold_errors(val):
        train = np.setdiff1d(all_idx, val, assume_unique=True)
        errs = {}
        for kernel, members in chains.items():
            prepared = _prepare(X[train], y[train], kernel, standardize)
            prev, seen = None, {}
            for g in members:
                if grid[g] in seen:
                    # identical configs score identically
                    errs[g] = errs[seen[grid[g]]]
                    continue
                seen[grid[g]] = g
                model = _solve(prepared, grid[g], prev, warn=False)
                prev = model.alphas
                resid = predict_svr(model, X[val]) - y[val]
                errs[g] = score(resid)
        return errs

    n_threads = _threads()
    if n_threads > 1:
        with ThreadPoolExecutor(n_threads) as pool:
            per_fold = list(pool.map(fold_errors, folds))
    else:
        per_fold = [fold_errors(val) for val in folds]
    scores = [float(np.mean([errs[g] for errs in per_fold])) for g in range(len(grid))]
    order = min(range(len(grid)), key=lambda g: (scores[g], grid[g].C, grid[g].epsilon, g))
    return grid[order], scores


# --------------------------------------------------------------------------
# estimator

class EpsilonSVR(RegressorMixin, BaseEstimator):
    """scikit-learn compatible wrapper around :func:`fit_svr`.

    Parameters
    ----------
    C, epsilon : float
        Penalty weight and tube half-width, both in standardized target units.
    kernel : {"polynomial", "rbf", "linear"}
    degree, c : polynomial degree and offset; ``(x.z + c)**degree``.
    gamma : rbf width; ``None`` means ``1 / n_features``.
    """

    def __init__(self, C=1.0, epsilon=1e-3, kernel="polynomial", degree=2, c=1.0,
                 gamma=None, kkt_tol=1e-6, max_passes=200, standardize=True):
        self.C = C
        self.epsilon = epsilon
        self.kernel = kernel
        self.degree = degree
        self.c = c
        self.gamma = gamma
        self.kkt_tol = kkt_tol
        self.max_passes = max_passes
        self.standardize = standardize

    def _config(self):
        spec = KernelSpec(self.kernel, self.degree, self.c, self.gamma)
        return SvrConfig(self.C, self.epsilon, spec, self.kkt_tol, self.max_passes)

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        self.model_ = fit_svr(X, y, self._config(), self.standardize)
        self.support_ = self.model_.support
        self.dual_coef_ = self.model_.support_alphas
        self.intercept_ = self.model_.bias
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return predict_svr(self.model_, check_array(X))
