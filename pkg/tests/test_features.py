import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from gridmap.features import (
    PhysicalFeatureTransformer,
    QuadraticFeatureMap,
    RectangularTransformer,
    construct_beta_star,
    physical_features,
    quad_feature_dim,
    quad_feature_map,
    to_rectangular,
)
from gridmap.grid import build_admittance, evaluate_injections_rect, generate_feeder


@pytest.fixture(scope="module")
def admittance():
    return build_admittance(generate_feeder(8, "radial", seed=0))


def random_states(rng, T, n):
    return to_rectangular(rng.uniform(0.9, 1.1, (T, n)), rng.uniform(-0.2, 0.2, (T, n)))


def test_rectangular_examples():
    s = math.sqrt(2) / 2
    np.testing.assert_allclose(to_rectangular(np.array([1.0]), np.array([0.0])), [s, s])
    np.testing.assert_allclose(to_rectangular(np.array([1.0]), np.array([-math.pi / 4])),
                               [1.0, 0.0], atol=1e-15)
    u, w = to_rectangular(np.array([0.95]), np.array([-0.02]))
    assert u == pytest.approx(0.95 * math.cos(0.76539816), abs=1e-8)
    assert w == pytest.approx(0.95 * math.sin(0.76539816), abs=1e-8)


def test_rectangular_rejects_bad_input():
    with pytest.raises(ValueError):
        to_rectangular(np.ones(3), np.zeros(2))
    with pytest.raises(ValueError):
        to_rectangular(np.array([0.0]), np.array([0.0]))


def test_real_state_has_zero_sine_features():
    x = np.concatenate([np.random.default_rng(0).uniform(0.9, 1.1, 5), np.zeros(5)])
    f = physical_features(x, 2, "p")
    assert np.all(f[5:] == 0)


@pytest.mark.parametrize("target", ["p", "q"])
def test_physical_features_reproduce_injections(admittance, target):
    rng = np.random.default_rng(1)
    X = random_states(rng, 50, 8)
    for bus in range(8):
        coef = np.concatenate([admittance.real[bus], admittance.imag[bus]])
        pred = physical_features(X, bus, target) @ coef
        p, q = zip(*(evaluate_injections_rect(admittance, x) for x in X))
        actual = np.array(p if target == "p" else q)[:, bus]
        np.testing.assert_allclose(pred, actual, atol=1e-12)


def test_physical_features_errors():
    with pytest.raises(IndexError):
        physical_features(np.ones(4), 2)
    with pytest.raises(ValueError):
        physical_features(np.ones(4), 0, "s")
    with pytest.raises(ValueError):
        physical_features(np.ones(3), 0)


def test_quad_map_examples():
    phi = quad_feature_map(np.array([3.0]), c=1.0)
    np.testing.assert_allclose(phi, [9, 3 * math.sqrt(2), 1])
    assert phi @ phi == pytest.approx(100)
    zero = quad_feature_map(np.zeros(3), c=1.0)
    assert np.all(zero[:-1] == 0) and zero[-1] == 1
    phi = quad_feature_map(np.array([1.0, 2.0]), c=0.0)
    np.testing.assert_allclose(phi, [1, 4, 2 * math.sqrt(2), 0, 0, 0])
    assert phi @ phi == pytest.approx(25)
    assert quad_feature_dim(2) == 6


def test_quad_map_rejects_negative_offset():
    with pytest.raises(ValueError):
        quad_feature_map(np.ones(2), c=-1.0)


@settings(max_examples=50, deadline=None)
@given(a=arrays(float, 6, elements=st.floats(-3, 3)),
       b=arrays(float, 6, elements=st.floats(-3, 3)),
       c=st.sampled_from([0.0, 0.5, 1.0, 10.0]))
def test_kernel_identity_property(a, b, c):
    lhs = quad_feature_map(a, c) @ quad_feature_map(b, c)
    rhs = (a @ b + c) ** 2
    assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(rhs))


@pytest.mark.parametrize("target", ["p", "q"])
def test_beta_star_is_exact(admittance, target):
    rng = np.random.default_rng(2)
    X = random_states(rng, 100, 8)
    Phi = quad_feature_map(X)
    for bus in range(8):
        beta = construct_beta_star(admittance.real[bus], admittance.imag[bus], bus, target)
        p, q = zip(*(evaluate_injections_rect(admittance, x) for x in X))
        actual = np.array(p if target == "p" else q)[:, bus]
        assert np.max(np.abs(Phi @ beta - actual)) < 1e-10


def test_beta_star_zero_row():
    beta = construct_beta_star(np.zeros(4), np.zeros(4), 1)
    assert np.all(beta == 0)


def test_beta_star_ignores_offset_slots(admittance):
    beta = construct_beta_star(admittance.real[3], admittance.imag[3], 3, c=2.0)
    d = 16
    # linear and constant slots stay empty since the injection is a pure quadratic form
    assert np.all(beta[d * (d + 1) // 2:] == 0)


def test_transformers_compose():
    rng = np.random.default_rng(3)
    v, th = rng.uniform(0.9, 1.1, (10, 4)), rng.uniform(-0.1, 0.1, (10, 4))
    X = RectangularTransformer().fit_transform(np.hstack([v, th]))
    np.testing.assert_allclose(X, to_rectangular(v, th))
    F = PhysicalFeatureTransformer(bus=1, target="q").fit_transform(X)
    np.testing.assert_allclose(F, physical_features(X, 1, "q"))
    Q = QuadraticFeatureMap(c=0.5).fit_transform(X)
    np.testing.assert_allclose(Q, quad_feature_map(X, 0.5))
