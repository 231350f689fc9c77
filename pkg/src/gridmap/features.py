"""Coordinate transforms and feature constructions for the learners.

The rectangular state stacks real parts then imaginary parts,
``x = [u_1..u_m, w_1..w_m]``. The quadratic feature map uses the fixed
ordering

    [x_i^2 (i=1..d)] + [sqrt(2) x_i x_j (i<j, row-major)] + [sqrt(2c) x_i] + [c]

so that ``<phi(a), phi(b)> == (a.b + c)^2``.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

DEFAULT_THETA_REF = math.pi / 4


def to_rectangular(v, theta, theta_ref: float = DEFAULT_THETA_REF) -> np.ndarray:
    """Polar magnitudes/angles to ``[u; w]`` rotated by ``theta_ref``.

    Accepts a single state (1-D arrays of length m) or a batch (T x m); the
    result has 2m columns.
    """
    v = np.asarray(v, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if v.shape != theta.shape:
        raise ValueError(f"v and theta shapes differ: {v.shape} vs {theta.shape}")
    if np.any(v <= 0):
        raise ValueError("voltage magnitudes must be positive")
    ang = theta + theta_ref
    return np.concatenate([v * np.cos(ang), v * np.sin(ang)], axis=-1)


def _split(x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] % 2:
        raise ValueError("rectangular state must have even length")
    m = x.shape[-1] // 2
    return x[..., :m], x[..., m:], m


def physical_features(x, bus: int, target: str = "p") -> np.ndarray:
    """Regressor rows whose inner product with ``[g_i; b_i]`` gives the
    injection at position ``bus`` (0-based within the state).

    ``p``: ``[u_i u_k + w_i w_k]_k`` then ``[w_i u_k - u_i w_k]_k``.
    ``q``: ``[w_i u_k - u_i w_k]_k`` then ``-[u_i u_k + w_i w_k]_k``.
    """
    u, w, m = _split(x)
    if not 0 <= bus < m:
        raise IndexError(f"bus position {bus} outside 0..{m - 1}")
    ui, wi = u[..., bus:bus + 1], w[..., bus:bus + 1]
    cos_part = ui * u + wi * w
    sin_part = wi * u - ui * w
    if target == "p":
        return np.concatenate([cos_part, sin_part], axis=-1)
    if target == "q":
        return np.concatenate([sin_part, -cos_part], axis=-1)
    raise ValueError(f"target must be 'p' or 'q', got {target!r}")


def quad_feature_dim(d: int) -> int:
    return d * (d + 1) // 2 + d + 1


def quad_feature_map(x, c: float = 1.0) -> np.ndarray:
    """Explicit feature map of the kernel ``(a.b + c)^2``."""
    if c < 0:
        raise ValueError("kernel offset c must be >= 0")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    d = X.shape[1]
    iu, ju = np.triu_indices(d, k=1)
    parts = [
        X ** 2,
        math.sqrt(2.0) * X[:, iu] * X[:, ju],
        math.sqrt(2.0 * c) * X,
        np.full((X.shape[0], 1), float(c)),
    ]
    out = np.concatenate(parts, axis=1)
    return out[0] if single else out


def quad_slot_index(d: int):
    """Lookup helpers for the quadratic layout over a d-dimensional input.

    Returns ``(square, pair)`` where ``square(a)`` is the slot of ``x_a^2``
    and ``pair(a, b)`` the slot of ``sqrt(2) x_a x_b`` for ``a != b``.
    """
    iu, ju = np.triu_indices(d, k=1)
    pair_slot = {(int(a), int(b)): d + k for k, (a, b) in enumerate(zip(iu, ju))}

    def square(a):
        return a

    def pair(a, b):
        return pair_slot[(a, b) if a < b else (b, a)]

    return square, pair


def construct_beta_star(g_row, b_row, bus: int, target: str = "p", c: float = 1.0) -> np.ndarray:
    """Weights over the quadratic feature map of ``x = [u; w]`` that
    reproduce the exact injection at ``bus`` (0-based).

    ``g_row``/``b_row`` are row ``bus`` of the real and imaginary parts of
    the admittance matrix. The ``q`` variant follows from the same
    expansion with the roles of g and b rotated.
    """
    g_row = np.asarray(g_row, dtype=float)
    b_row = np.asarray(b_row, dtype=float)
    if g_row.shape != b_row.shape or g_row.ndim != 1:
        raise ValueError("g_row and b_row must be 1-D arrays of equal length")
    n = g_row.size
    if not 0 <= bus < n:
        raise IndexError(f"bus position {bus} outside 0..{n - 1}")
    if target == "p":
        cos_coef, sin_coef = g_row, b_row
    elif target == "q":
        cos_coef, sin_coef = -b_row, g_row
    else:
        raise ValueError(f"target must be 'p' or 'q', got {target!r}")
    d = 2 * n
    beta = np.zeros(quad_feature_dim(d))
    square, pair = quad_slot_index(d)
    i = bus
    r2 = 1.0 / math.sqrt(2.0)
    # injection = sum_k cos_coef[k] (u_i u_k + w_i w_k) + sin_coef[k] (w_i u_k - u_i w_k)
    for k in range(n):
        if k == i:
            beta[square(i)] += cos_coef[i]
            beta[square(n + i)] += cos_coef[i]
            # w_i u_i - u_i w_i vanishes
            continue
        beta[pair(i, k)] += cos_coef[k] * r2
        beta[pair(n + i, n + k)] += cos_coef[k] * r2
        beta[pair(n + i, k)] += sin_coef[k] * r2
        beta[pair(i, n + k)] -= sin_coef[k] * r2
    return beta


class RectangularTransformer(TransformerMixin, BaseEstimator):
    """Map ``[v_1..v_m, theta_1..theta_m]`` columns to ``[u; w]``."""

    def __init__(self, theta_ref=DEFAULT_THETA_REF):
        self.theta_ref = theta_ref

    def fit(self, X, y=None):
        X = check_array(X)
        if X.shape[1] % 2:
            raise ValueError("expected an even number of columns [v; theta]")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        X = check_array(X)
        m = X.shape[1] // 2
        return to_rectangular(X[:, :m], X[:, m:], self.theta_ref)


class PhysicalFeatureTransformer(TransformerMixin, BaseEstimator):
    """Stateless wrapper around :func:`physical_features` for pipelines."""

    def __init__(self, bus=0, target="p"):
        self.bus = bus
        self.target = target

    def fit(self, X, y=None):
        X = check_array(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        return physical_features(check_array(X), self.bus, self.target)


class QuadraticFeatureMap(TransformerMixin, BaseEstimator):
    def __init__(self, c=1.0):
        self.c = c

    def fit(self, X, y=None):
        X = check_array(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        return quad_feature_map(check_array(X), self.c)
