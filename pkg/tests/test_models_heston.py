import itertools

import numpy as np
import pytest

from pssm_qml.model_core import chain_of, noise_cov, validate_model
from pssm_qml.models import HestonModel, heston_model, heston_simulate

VTHETA = np.array([1.0, 0.16, 0.3, -0.5])


def test_displayed_transition_pair():
    model = HestonModel()
    a = model.a(VTHETA)
    A = model.A(VTHETA)
    e = np.exp(-1.0)
    assert a == pytest.approx([0.16 * (1 - e), 0.0, 0.16 * (1 - (1 - e))], abs=1e-12)
    assert A[0, 0] == pytest.approx(0.367879441, abs=1e-8)
    assert A[2, 0] == pytest.approx(0.632120559, abs=1e-8)
    assert np.allclose(A[np.ix_([0, 1, 2], [1, 2])], 0.0)
    # kappa=1, m=0.16 example values
    assert a[0] == pytest.approx(0.101139, abs=1e-6)
    assert a[2] == pytest.approx(0.058861, abs=1e-6)


def test_kappa_to_zero_limit():
    model = HestonModel()
    theta = np.array([1e-7, 0.16, 0.3, -0.5])
    assert model.A(theta)[2, 0] == pytest.approx(1.0, abs=1e-6)


def test_engine_order1_matches_closed_form():
    # the affine engine's degree-1 rows must collapse to the displayed (a, A)
    model = HestonModel()
    for theta in ([1.0, 0.16, 0.3, -0.5], [0.7, 0.04, 0.2, 0.3], [2.0, 0.5, 0.9, -0.9]):
        theta = np.asarray(theta)
        cond = model.conditional_moments(theta, 1)
        assert np.allclose(cond[0].reshape(-1), model.a(theta), atol=1e-12)
        assert np.allclose(cond[1], model.A(theta), atol=1e-12)
        assert np.allclose(cond[0].reshape(-1), model._tables(theta)["B1"][0], atol=1e-15)


def test_conditional_mean_of_v_is_cir():
    model = HestonModel()
    kappa, m = VTHETA[0], VTHETA[1]
    v0 = 0.11
    x = np.array([v0, 0.3, 0.09])
    cond = model.conditional_moments(VTHETA, 1)
    ev = (cond[0].reshape(-1) + cond[1] @ x)[0]
    assert ev == pytest.approx(m + (v0 - m) * np.exp(-kappa), rel=1e-12)


def test_squared_return_mean_ito_isometry():
    # E[dY^2 | v0] = int_0^1 E[v(s)] ds = m + (v0 - m)(1 - e^-k)/k
    model = HestonModel()
    kappa, m = VTHETA[0], VTHETA[1]
    v0 = 0.2
    x = np.array([v0, 0.0, 0.0])
    cond = model.conditional_moments(VTHETA, 1)
    ev = (cond[0].reshape(-1) + cond[1] @ x)[2]
    expected = m + (v0 - m) * (1 - np.exp(-kappa)) / kappa
    assert ev == pytest.approx(expected, rel=1e-10)


def _mc_heston_conditional(theta, v0, n_paths, inner, rng):
    kappa, m, sigma, rho = theta
    h = 1.0 / inner
    crho = np.sqrt(1 - rho * rho)
    v = np.full(n_paths, v0)
    y = np.zeros(n_paths)
    for _ in range(inner):
        z = rng.standard_normal((2, n_paths))
        sqv = np.sqrt(np.maximum(v, 0.0))
        y += sqv * np.sqrt(h) * z[0]
        v = np.maximum(v + kappa * (m - v) * h + sigma * sqv * np.sqrt(h) * (rho * z[0] + crho * z[1]), 0.0)
    return v, y


def test_conditional_moments_match_monte_carlo(rng):
    theta = VTHETA
    v0 = 0.12
    n = 400_000
    v, y = _mc_heston_conditional(theta, v0, n, inner=2000, rng=rng)
    model = HestonModel()
    x = np.array([v0, 0.0, 0.0])
    state = np.stack([v, y, y * y], axis=1)
    for j in (1, 2):
        cond = model.conditional_moments(theta, j)
        xpow = x.copy() if j == 1 else np.kron(x, x)
        pred = cond[0].reshape(-1) + sum(
            cond[s] @ (np.array([1.0]) if s == 0 else _kron_power(x, s))
            for s in range(1, j + 1))
        samples = state if j == 1 else _kron_rows(state, 2)
        mean = samples.mean(axis=0)
        se = samples.std(axis=0, ddof=1) / np.sqrt(n)
        assert np.all(np.abs(mean - pred) < 4 * se + 5e-4 * np.abs(pred) + 1e-6)
    # spot-check two order-4 entries (v^4 and dY^4)
    cond4 = model.conditional_moments(theta, 4)
    pred4 = cond4[0].reshape(-1).copy()
    for s in range(1, 5):
        pred4 += cond4[s] @ _kron_power(x, s)
    for flat_idx, samp in ((0, v**4), (np.ravel_multi_index((1, 1, 1, 1), (3,) * 4), y**4)):
        se = samp.std(ddof=1) / np.sqrt(n)
        assert abs(samp.mean() - pred4[flat_idx]) < 4 * se + 1e-6


def _kron_power(x, s):
    out = x.copy()
    for _ in range(s - 1):
        out = np.kron(out, x)
    return out


def _kron_rows(state, j):
    out = state.copy()
    for _ in range(j - 1):
        out = np.einsum("ni,nj->nij", out, state).reshape(state.shape[0], -1)
    return out


def test_noise_q2_nonzero_for_squared_returns():
    # the dY^2 component makes X non-affine-sampled: E[N (x) N | x] keeps a
    # genuine quadratic coefficient in the (3,3) slot
    model = HestonModel()
    q2 = model.noise_moments(VTHETA, 2)[2]
    assert abs(q2[8, 0]) > 1e-4
    kappa = VTHETA[0]
    closed = 2.0 / kappa**2 * (1 - np.exp(-kappa)) ** 2
    assert q2[8, 0] == pytest.approx(closed, rel=1e-8)


def test_noise_cov_vs_monte_carlo(rng):
    theta = VTHETA
    model = HestonModel(v0=0.09)
    n = 300_000
    v0 = 0.09
    v, y = _mc_heston_conditional(theta, v0, n, inner=1000, rng=rng)
    x1 = np.stack([v, y, y * y], axis=1)
    a, A = model.a(theta), model.A(theta)
    noise = x1 - a - np.array([v0, 0.0, 0.0]) @ A.T
    c1 = noise_cov(model, theta, 1)
    emp = np.einsum("ni,nj->ij", noise, noise) / n
    se = np.einsum("ni,nj->nij", noise, noise).std(axis=0, ddof=1) / np.sqrt(n)
    assert np.all(np.abs(emp - c1) < 4 * se + 2e-4)


def test_validate_at_reference_theta():
    model = HestonModel()
    diag = validate_model(model, VTHETA)
    assert diag.contractive and diag.c_positive_definite
    assert diag.rho_A < 1 and diag.rho_order2 < 1 and diag.rho_order4 < 1


def test_isolated_variant():
    model = heston_model(isolate="sigma")
    assert model.k == 1
    assert np.allclose(model.A([0.3]), HestonModel().A(VTHETA))
    with pytest.raises(ValueError):
        heston_model(isolate="nope")


def test_simulator_determinism_and_shape():
    x1 = heston_simulate(VTHETA, T=50, seed=7)
    x2 = heston_simulate(VTHETA, T=50, seed=7)
    assert x1.shape == (50, 3)
    assert np.array_equal(x1, x2)
    assert np.all(x1[:, 0] >= 0)
    assert np.allclose(x1[:, 2], x1[:, 1] ** 2)


def test_simulator_zero_vol_is_deterministic_cir_drift():
    theta = np.array([1.0, 0.16, 0.0, 0.0])
    x = heston_simulate(theta, T=5, seed=3, inner_dt=1e-3, v0=0.09)
    # with sigma = 0 the variance follows the deterministic Euler drift path
    v = 0.09
    h = 1e-3
    for _ in range(5000):
        v = v + 1.0 * (0.16 - v) * h
    assert x[4, 0] == pytest.approx(0.16 + (0.09 - 0.16) * np.exp(-5.0), rel=1e-2)
    assert x[0, 0] == pytest.approx(v, rel=1e-12)


def test_simulator_uncorrelated_streams(rng):
    theta = np.array([1.0, 0.16, 0.3, 0.0])
    x = heston_simulate(theta, T=20_000, seed=11)
    dv = np.diff(x[:, 0])
    dy = x[1:, 1]
    corr = np.corrcoef(dv, dy)[0, 1]
    assert abs(corr) < 4.0 / np.sqrt(len(dv))


def test_simulator_long_run_mean():
    theta = VTHETA
    x = heston_simulate(theta, T=100_000, seed=5)
    vbar = x[:, 0].mean()
    # batch-means standard error on the autocorrelated v path
    blocks = x[:, 0][: 100_000 - 100_000 % 100].reshape(-1, 100).mean(axis=1)
    se = blocks.std(ddof=1) / np.sqrt(blocks.size)
    assert abs(vbar - 0.16) < 4 * se


def test_smallscale_augmented_state_is_valid_pssm():
    model = HestonModel(dt=1.0 / 240.0,
                        components=[(1, 0), (2, 0), (0, 1), (0, 2), (0, 4)],
                        m_unobs=2)
    chain = chain_of(model, VTHETA)
    assert chain.a.size == 5
    # degree bound respected: building all noise moments must not raise
    for j in (2, 3, 4):
        model.noise_moments(VTHETA, j)
