import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robusta.core import DataError
from robusta.losses import loss, loss_and_slope, loss_batch, loss_values, softplus

from oracles import ref_losses

KINDS = ["lad", "ols", "svm", "logistic"]


def test_hinge_kink_is_zero():
    assert loss("svm", [1.0], 0.0, [1.0], 1.0) == 0.0


def test_logistic_at_zero_margin():
    assert loss("logistic", [0.0], 0.0, [5.0], -1.0) == pytest.approx(math.log(2.0), abs=1e-15)


def test_ols_hand_value():
    assert loss("ols", [2.0], 1.0, [3.0], 10.0) == 9.0


def test_batch_matches_scalar_calls():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(3, 2))
    y = np.array([1.0, -1.0, 1.0])
    theta = rng.normal(size=2)
    for kind in KINDS:
        ev = loss_batch(kind, theta, 0.3, X, y)
        # matrix and single-row products may round differently in the last place
        one = [loss(kind, theta, 0.3, X[i], y[i]) for i in range(3)]
        assert np.allclose(ev.values, one, rtol=1e-14, atol=1e-15)
        assert ev.subgrad_theta.shape == (3, 2) and ev.subgrad_intercept.shape == (3,)


def test_logistic_large_margin_no_overflow():
    v = loss("logistic", [40.0], 0.0, [1.0], 1.0)
    assert 0.0 < v < 1e-17
    vals = loss_values("logistic", [1.0], 0.0, np.array([[1e4], [-1e4]]), np.array([1.0, 1.0]))
    assert np.all(np.isfinite(vals))
    assert vals[1] == pytest.approx(1e4)


def test_kink_conventions():
    _, s = loss_and_slope("svm", np.array([1.0]), np.array([1.0]))
    assert s[0] == 0.0
    _, s = loss_and_slope("lad", np.array([2.0]), np.array([2.0]))
    assert s[0] == 0.0


def test_dimension_mismatch():
    with pytest.raises(DataError):
        loss_values("ols", [1.0, 2.0], 0.0, np.ones((3, 3)), np.ones(3))


def test_softplus_matches_reference():
    z = np.linspace(-50, 50, 1001)
    assert np.allclose(softplus(z), np.logaddexp(0.0, z), rtol=1e-14, atol=0)


@pytest.mark.parametrize("kind", KINDS)
def test_values_match_reference_formulas(kind):
    rng = np.random.default_rng(3)
    X = rng.normal(size=(40, 3))
    y = np.sign(rng.normal(size=40)) if kind in ("svm", "logistic") else rng.normal(size=40)
    theta = rng.normal(size=3)
    assert np.allclose(loss_values(kind, theta, -0.2, X, y), ref_losses(kind, theta, -0.2, X, y), rtol=1e-13)


@pytest.mark.parametrize("kind", KINDS)
def test_finite_difference_subgradient(kind):
    rng = np.random.default_rng(4)
    h = 1e-6
    checked = 0
    for _ in range(200):
        x = rng.normal(size=3)
        y = float(np.sign(rng.normal())) if kind in ("svm", "logistic") else float(rng.normal())
        theta, b = rng.normal(size=3), float(rng.normal())
        m = x @ theta + b
        kink = {"lad": abs(y - m), "svm": abs(1 - y * m)}.get(kind, 1.0)
        if kink < 1e-3:
            continue
        ev = loss_batch(kind, theta, b, x[None, :], np.array([y]))
        g = np.append(ev.subgrad_theta[0], ev.subgrad_intercept[0])
        u = rng.normal(size=4)
        fp = loss(kind, theta + h * u[:3], b + h * u[3], x, y)
        fm = loss(kind, theta - h * u[:3], b - h * u[3], x, y)
        assert (fp - fm) / (2 * h) == pytest.approx(g @ u, abs=1e-5 * max(1.0, abs(g @ u)))
        checked += 1
    assert checked > 150


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(KINDS), st.integers(0, 2**31), st.floats(0.01, 0.99))
def test_convexity_in_parameters(kind, seed, lam):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(5, 2)) * 2
    y = np.sign(rng.normal(size=5)) if kind in ("svm", "logistic") else rng.normal(size=5)
    t1, t2 = rng.normal(size=3) * 2, rng.normal(size=3) * 2
    mix = lam * t1 + (1 - lam) * t2
    lhs = loss_values(kind, mix[:2], mix[2], X, y)
    rhs = lam * loss_values(kind, t1[:2], t1[2], X, y) + (1 - lam) * loss_values(kind, t2[:2], t2[2], X, y)
    assert np.all(lhs <= rhs + 1e-10)


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(KINDS), st.integers(0, 2**31))
def test_subgradient_inequality(kind, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(4, 2)) * 2
    y = np.sign(rng.normal(size=4)) if kind in ("svm", "logistic") else rng.normal(size=4)
    t, t2 = rng.normal(size=3) * 2, rng.normal(size=3) * 2
    ev = loss_batch(kind, t[:2], t[2], X, y)
    g = np.hstack([ev.subgrad_theta, ev.subgrad_intercept[:, None]])
    new = loss_values(kind, t2[:2], t2[2], X, y)
    assert np.all(new >= ev.values + g @ (t2 - t) - 1e-10)
