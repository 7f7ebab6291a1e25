import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voisynth import regress
from voisynth.regress import FitConfig, MarsModel, PolynomialModel


@pytest.fixture(scope="module")
def sin_data():
    rng = np.random.default_rng(42)
    x = rng.uniform(size=5000)
    y = np.sin(2 * np.pi * x) + rng.normal(0, 0.1, 5000)
    return x, y, rng


def _r2(model, y):
    return 1 - np.sum(model.resid ** 2) / np.sum((y - y.mean()) ** 2)


def test_exact_line():
    x = np.linspace(0, 1, 1000)
    m = regress.fit(x, 3 + 2 * x)
    assert isinstance(m, MarsModel)
    assert np.max(np.abs(m.resid)) < 1e-9
    assert np.allclose(m.fitted, 3 + 2 * x, atol=1e-9)


def test_two_valued_predictor():
    rng = np.random.default_rng(9)
    x = rng.integers(0, 2, 5000).astype(float)
    y = 2.0 * x + rng.normal(0, 0.1, 5000)
    m = regress.fit(x, y)
    assert m.n_terms > 1
    assert np.mean(m.resid ** 2) == pytest.approx(0.01, rel=0.1)


def test_constant_target_gives_intercept_only():
    x = np.random.default_rng(0).uniform(size=(1000, 2))
    m = regress.fit(x, np.full(1000, 2.5))
    assert m.terms == ((),)
    assert np.allclose(m.predict(x[:5]), 2.5)


def test_sin_curve_residual_variance(sin_data):
    x, y, _ = sin_data
    m = regress.fit(x, y)
    msr = np.mean(m.resid ** 2)
    assert 0.009 <= msr <= 0.013
    assert m.n_terms <= 21


def test_model_invariants(sin_data):
    x, y, _ = sin_data
    m = regress.fit(x, y)
    assert np.allclose(m.fitted + m.resid, y, rtol=1e-8, atol=0)
    for term in m.terms:
        for j, sign, knot in term:
            assert knot in x and sign in (1, -1)
    assert np.allclose(m.predict(x), m.fitted, rtol=1e-12, atol=1e-12)


def test_prediction_by_hand():
    rng = np.random.default_rng(1)
    X = rng.uniform(size=(2000, 2))
    y = np.maximum(0, X[:, 0] - 0.3) * X[:, 1] + rng.normal(0, 0.01, 2000)
    m = regress.fit(X, y)
    row = X[17]
    manual = 0.0
    for coef, term in zip(m.coef, m.terms):
        v = 1.0
        for j, sign, knot in term:
            v *= max(0.0, sign * (row[j] - knot))
        manual += coef * v
    assert m.predict(row[None, :])[0] == pytest.approx(manual, rel=1e-12)


def test_predict_checks_columns(sin_data):
    x, y, _ = sin_data
    m = regress.fit(x, y)
    with pytest.raises(ValueError, match="predictors"):
        m.predict(np.zeros((3, 2)))


def test_variance_decomposition(sin_data):
    x, y, _ = sin_data
    m = regress.fit(x, y)
    K = len(y)
    lhs = y.var(ddof=1)
    rhs = m.fitted.var(ddof=1) + np.sum(m.resid ** 2) / (K - 1)
    assert rhs == pytest.approx(lhs, rel=1e-8)
    assert m.fitted.var(ddof=1) <= lhs


@settings(max_examples=20, deadline=None)
@given(st.floats(-50, 50).filter(lambda a: abs(a) > 1e-3), st.floats(-100, 100))
def test_affine_equivariance(a, b):
    rng = np.random.default_rng(3)
    x = rng.uniform(size=(800, 2))
    y = np.sin(3 * x[:, 0]) + x[:, 1] ** 2 + rng.normal(0, 0.1, 800)
    m = regress.fit(x, y)
    m2 = regress.fit(x, a * y + b)
    assert m2.terms == m.terms
    assert np.allclose(m2.fitted, a * m.fitted + b, rtol=1e-8, atol=1e-8 * (abs(a) + abs(b)))


def test_noise_columns_do_not_inflate_fit(sin_data):
    x, y, rng = sin_data
    r2 = _r2(regress.fit(x, y), y)
    X = np.column_stack([x, rng.uniform(size=(len(x), 3))])
    assert _r2(regress.fit(X, y), y) - r2 <= 0.02


def test_insufficient_draws():
    with pytest.raises(regress.RegressionError, match="insufficient draws"):
        regress.fit(np.zeros((6, 2)) + np.arange(6)[:, None], np.arange(6.0))


def test_constant_column_dropped_with_warning():
    rng = np.random.default_rng(5)
    X = np.column_stack([rng.uniform(size=1000), np.ones(1000)])
    with pytest.warns(UserWarning, match="constant predictor"):
        m = regress.fit(X, X[:, 0] ** 2)
    assert all(j == 0 for t in m.terms for j, _, _ in t)


def test_small_k_caps_terms():
    rng = np.random.default_rng(6)
    X = rng.uniform(size=(150, 2))
    m = regress.fit(X, np.sin(6 * X[:, 0]) + rng.normal(0, 0.1, 150))
    assert m.n_terms <= 14
    assert any("max_terms" in w for w in m.warnings)


def test_polynomial_fallback():
    rng = np.random.default_rng(7)
    x = rng.uniform(-1, 1, 300)
    y = 1 - x + 0.5 * x ** 3
    m = regress.fit(x, y)            # p = 1, K < 500 -> polynomial
    assert isinstance(m, PolynomialModel)
    assert np.max(np.abs(m.resid)) < 1e-9
    m2 = regress.fit(np.column_stack([x, x ** 2 + rng.normal(0, 1, 300)]), y,
                     FitConfig(backend="polynomial"))
    assert m2.n_terms == 10


def test_coefficient_draws_consistency(sin_data):
    x, y, _ = sin_data
    m = regress.fit(x, y)
    d = regress.coefficient_draws(m, 100_000, seed=1)
    assert d.shape == (100_000, m.n_terms)
    se = d.std(axis=0) / np.sqrt(len(d))
    assert np.all(np.abs(d.mean(axis=0) - m.coef) < 4 * se + 1e-15)


def test_coefficient_draws_exact_fit():
    x = np.linspace(0, 1, 1000)
    m = regress.fit(x, 3 + 2 * x)
    m.resid[:] = 0.0
    d = regress.coefficient_draws(m, 10, seed=2)
    assert np.allclose(d, m.coef[None, :], rtol=0, atol=1e-12)


def test_coefficient_draws_match_ols_variance():
    rng = np.random.default_rng(8)
    x = rng.uniform(0.5, 2.0, 2000)
    y = 1.5 * x + rng.normal(0, 0.3, 2000)
    B = x[:, None]
    coef, *_ = np.linalg.lstsq(B, y, rcond=None)
    resid = y - B @ coef
    m = MarsModel(((),), coef, 0.0, 1, B @ coef, resid, B)
    draws = regress.coefficient_draws(m, 200_000, seed=3)
    sigma2 = resid @ resid / (2000 - 1)
    assert draws[:, 0].var() == pytest.approx(sigma2 / np.sum(x ** 2), rel=0.05)


def test_json_dump(tmp_path, sin_data):
    x, y, _ = sin_data
    m = regress.fit(x, y)
    p = tmp_path / "m.json"
    regress.dump_json(m, p)
    d = json.loads(p.read_text())
    assert d["backend"] == "mars"
    assert len(d["terms"]) == len(d["coefficients"]) == m.n_terms
