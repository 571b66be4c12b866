import json
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from formpipe.registration import (
    CpdConfig,
    NonRigidTransform,
    RegistrationError,
    apply_transform,
    cpd_register,
    e_step,
    gaussian_kernel,
)
from formpipe.synthgen import warp_benchmark

GRID = np.array([(x, y) for y in np.linspace(25, 475, 10) for x in np.linspace(25, 475, 10)])


def naive_posterior(X, T, sigma2, w):
    M, N = len(T), len(X)
    c = 2 * math.pi * sigma2 * (w / (1 - w)) * (M / N)
    P = np.zeros((M, N))
    for n in range(N):
        k = [math.exp(-((X[n] - T[m]) @ (X[n] - T[m])) / (2 * sigma2)) for m in range(M)]
        den = sum(k) + c
        for m in range(M):
            P[m, n] = k[m] / den
    return P


def test_kernel_closed_form():
    beta = 1.7
    G = gaussian_kernel(np.array([[0.0, 0.0], [beta * math.sqrt(2), 0.0]]), beta)
    assert G[0, 1] == pytest.approx(math.exp(-1), abs=1e-12)
    assert G[0, 0] == G[1, 1] == 1.0


def test_kernel_symmetric():
    Y = np.random.default_rng(0).normal(size=(40, 2))
    G = gaussian_kernel(Y, 0.8)
    assert np.abs(G - G.T).max() < 1e-12
    np.testing.assert_array_equal(np.diag(G), 1.0)
    with pytest.raises(ValueError):
        gaussian_kernel(Y, 0.0)


def test_config_validation():
    for bad in ({"beta": 0}, {"lam": -1}, {"w": 1.0}, {"max_iters": 0}, {"tol": 0}):
        with pytest.raises(ValueError):
            CpdConfig(**bad)


def test_self_registration():
    r = cpd_register(GRID, GRID)
    assert r.converged
    assert np.abs(apply_transform(r.transform, GRID) - GRID).max() < 1e-6
    assert r.sigma2 > 0 and r.iterations <= CpdConfig().max_iters


def test_translation_recovery():
    X = GRID + [5.0, 0.0]
    r = cpd_register(GRID, X, CpdConfig(w=0.0))
    assert np.linalg.norm(apply_transform(r.transform, GRID) - X, axis=1).mean() < 0.1
    c = GRID.mean(axis=0)
    np.testing.assert_allclose(apply_transform(r.transform, c) - c, [5.0, 0.0], atol=0.2)


@pytest.mark.parametrize("seed", range(20))
def test_sinusoidal_benchmark(seed):
    Y, X, Xw = warp_benchmark(seed)
    t0 = time.perf_counter()
    r = cpd_register(Y, X, CpdConfig(w=0.1))
    assert time.perf_counter() - t0 < 5.0
    assert np.linalg.norm(apply_transform(r.transform, Y) - Xw, axis=1).mean() < 1.5


def test_posterior_matches_naive():
    rng = np.random.default_rng(1)
    X, T = rng.normal(size=(12, 2)), rng.normal(size=(7, 2))
    for w in (0.0, 0.1, 0.5):
        P, _ = e_step(X, T, 0.7, w)
        np.testing.assert_allclose(P, naive_posterior(X, T, 0.7, w), rtol=1e-10, atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 0.9), st.floats(1e-3, 10.0))
def test_posterior_columns(seed, w, sigma2):
    rng = np.random.default_rng(seed)
    X, T = rng.normal(size=(15, 2)) * 3, rng.normal(size=(9, 2)) * 3
    P, _ = e_step(X, T, sigma2, w)
    s = P.sum(axis=0)
    assert np.all(s >= 0) and np.all(s <= 1 + 1e-12)
    if w == 0:
        np.testing.assert_allclose(s, 1.0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_objective_non_increasing(seed):
    Y, X, _ = warp_benchmark(seed)
    r = cpd_register(Y, X, track_objective=True)
    ob = np.array(r.objective)
    slack = 1e-8 * np.maximum(1.0, np.abs(ob[:-1]))
    assert np.all(np.diff(ob) <= slack)
    assert all(s > 0 for s in r.sigma2_history)


def _dyadic(a):
    return np.round(a * 8) / 8


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.integers(-2400, 2400), st.integers(-2400, 2400))
def test_translation_equivariance(seed, cx8, cy8):
    # shifts on a 1/8 grid are exact in floating point, so the fit must not move at all
    Y, X, _ = warp_benchmark(seed, n_side=6)
    Y, X = _dyadic(Y), _dyadic(X)
    c = np.array([cx8, cy8]) / 8
    a = cpd_register(Y, X)
    b = cpd_register(Y + c, X + c)
    np.testing.assert_allclose(b.transform.coefficients, a.transform.coefficients, atol=1e-8, rtol=0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.floats(-300, 300), st.floats(-300, 300))
def test_translation_equivariance_displacement(seed, cx, cy):
    # arbitrary shifts round the inputs; W is ill-determined along the kernel's
    # near-null directions, but the fitted displacement field must agree
    Y, X, _ = warp_benchmark(seed, n_side=6)
    c = np.array([cx, cy])
    a = cpd_register(Y, X)
    b = cpd_register(Y + c, X + c)
    np.testing.assert_allclose(apply_transform(b.transform, Y + c) - c, apply_transform(a.transform, Y), atol=1e-6)


def test_deterministic():
    Y, X, _ = warp_benchmark(3)
    a = cpd_register(Y, X)
    b = cpd_register(Y, X)
    assert a.transform.dumps() == b.transform.dumps()
    assert a.sigma2 == b.sigma2 and a.iterations == b.iterations


def test_apply_transform_identity_and_rows():
    rng = np.random.default_rng(2)
    Y = rng.uniform(0, 100, size=(8, 2))
    t0 = NonRigidTransform(Y, 10.0, np.zeros((8, 2)))
    z = rng.uniform(-50, 150, size=(20, 2))
    np.testing.assert_array_equal(apply_transform(t0, z), z)
    W = rng.normal(size=(8, 2))
    t = NonRigidTransform(Y, 10.0, W)
    np.testing.assert_allclose(apply_transform(t, Y), Y + gaussian_kernel(Y, 10.0) @ W, rtol=1e-13)
    np.testing.assert_allclose(t(Y[3]), (Y + gaussian_kernel(Y, 10.0) @ W)[3], rtol=1e-13)


def test_fitted_rows_match_em_state():
    Y, X, _ = warp_benchmark(0)
    r = cpd_register(Y, X)
    t = r.transform
    G = gaussian_kernel(Y, t.beta)
    np.testing.assert_allclose(apply_transform(t, Y), Y + G @ t.coefficients, atol=1e-9)


def test_transform_json_round_trip():
    Y, X, _ = warp_benchmark(1)
    t = cpd_register(Y, X).transform
    d = json.loads(t.dumps())
    assert set(d) == {"base_points", "beta", "coefficients"}
    t2 = NonRigidTransform.from_dict(d)
    np.testing.assert_array_equal(apply_transform(t2, Y), apply_transform(t, Y))


def test_separate_normalisation_keeps_similarity():
    Y, X, Xw = warp_benchmark(4)
    r = cpd_register(Y, 0.5 * X + 40, CpdConfig(normalize="separate"))
    err = np.linalg.norm(apply_transform(r.transform, Y) - (0.5 * Xw + 40), axis=1).mean()
    assert err < 1.0
    assert "scale" in r.transform.to_dict()


def test_errors():
    with pytest.raises(ValueError):
        cpd_register(GRID[:2], GRID)
    bad = GRID.copy()
    bad[0, 0] = np.nan
    with pytest.raises(RegistrationError):
        cpd_register(GRID, bad)
    with pytest.raises(ValueError):
        NonRigidTransform(GRID, 1.0, np.full((100, 2), np.inf))
