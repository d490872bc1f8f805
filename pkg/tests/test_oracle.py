import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bilevel_tikhonov.oracle import (
    LinearOracle,
    convexity_region_bounds,
    population_gradient,
    population_hessian,
    population_loss,
)


def scalar_oracle():
    return LinearOracle.build(np.eye(1), np.eye(1), np.eye(1), 1.0)


def random_oracle(seed, d=None, K=None):
    rng = np.random.default_rng(seed)
    d = d or int(rng.integers(2, 21))
    K = K or int(rng.integers(1, 21))
    A = rng.standard_normal((K, d))
    G = rng.standard_normal((K, K))
    C = rng.standard_normal((d, d))
    ls = float(rng.uniform(0.1, 3.0))
    return LinearOracle.build(A, G @ G.T + 0.3 * np.eye(K), C @ C.T / d + 0.2 * np.eye(d), ls)


def brute_force_loss(o, lam):
    Gi = np.linalg.inv(o.noise_cov)
    M = np.linalg.solve(o.A.T @ Gi @ o.A + lam * np.linalg.inv(o.prior_cov), o.A.T @ Gi)
    E = M @ o.A - np.eye(o.A.shape[1])
    return np.trace(E @ o.prior_cov @ E.T) / o.lambda_star + np.trace(M @ o.noise_cov @ M.T)


def test_scalar_values():
    o = scalar_oracle()
    assert population_gradient(o, 2.0) == pytest.approx(2.0 / 27.0, rel=1e-12)
    assert population_hessian(o, 1.0) == pytest.approx(0.25, rel=1e-12)
    for lam in (0.5, 1.0, 2.0, 7.0):
        assert population_loss(o, lam) == pytest.approx((1 + lam**2) / (1 + lam) ** 2, rel=1e-12)
        assert population_gradient(o, lam) == pytest.approx(2 * (lam - 1) / (1 + lam) ** 3, rel=1e-12)


def test_scalar_p2():
    P2, _ = scalar_oracle().p_matrices(2.0)
    assert P2[0, 0] == pytest.approx(-2.0 / 27.0)


def test_convexity_bounds_scalar():
    o = scalar_oracle()
    b = convexity_region_bounds(o, lambda_u=10.0)
    assert b.H_star == pytest.approx(1.0 / 9.0)
    assert b.L_star == pytest.approx(2.0 / (3.0 * 11.0**3))
    assert b.region == pytest.approx((5.0 / 6.0, 7.0 / 6.0))
    assert population_gradient(o, 1.5) >= b.L_star / 2


@pytest.mark.parametrize("seed", range(10))
def test_stationarity_and_curvature(seed):
    o = random_oracle(seed)
    ls = o.lambda_star
    assert abs(population_gradient(o, ls)) <= 1e-12
    assert population_hessian(o, ls) > 0
    b = convexity_region_bounds(o, lambda_u=10.0)
    for lam in np.linspace(*b.region, 20):
        assert population_hessian(o, lam) >= b.H_star / 4
    grid = np.linspace(ls / 2, 2 * ls, 31)
    g = np.array([population_gradient(o, lam) for lam in grid])
    assert np.all(g[grid < ls * (1 - 1e-9)] < 0)
    assert np.all(g[grid > ls * (1 + 1e-9)] > 0)


@pytest.mark.parametrize("seed", range(5))
def test_loss_matches_direct_expectation(seed):
    o = random_oracle(seed + 100)
    for lam in (0.05, 0.7, 4.0):
        assert population_loss(o, lam) == pytest.approx(brute_force_loss(o, lam), rel=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_derivatives_match_finite_differences(seed):
    o = random_oracle(seed + 200)
    for lam in (0.3, 1.1, 2.5):
        h = 1e-5 * lam
        fd = (o.loss(lam + h) - o.loss(lam - h)) / (2 * h)
        assert o.gradient(lam) == pytest.approx(fd, rel=1e-6, abs=1e-10)
        fd2 = (o.gradient(lam + h) - o.gradient(lam - h)) / (2 * h)
        assert o.hessian(lam) == pytest.approx(fd2, rel=1e-5, abs=1e-9)


@pytest.mark.parametrize("seed", range(3))
def test_trace_formulas_against_p_matrices(seed):
    o = random_oracle(seed + 300)
    DDt = o.D @ o.D.T
    for lam in (0.2, 1.0, 3.0):
        P2, P3 = o.p_matrices(lam)
        np.testing.assert_allclose(P2, P2.T, atol=1e-12 * np.abs(P2).max())
        tr2 = np.trace(P2 @ DDt)
        assert o.trace_p2(lam) == pytest.approx(tr2, rel=1e-9)
        assert tr2 < 0
        r = 1 - lam / o.lambda_star
        hess = np.trace(DDt @ (r * P3 - P2 / o.lambda_star))
        assert o.hessian(lam) == pytest.approx(hess, rel=1e-8)


def test_q_bounds():
    o = random_oracle(7)
    for lam in (0.01, 1.0, 50.0):
        Q = o.Q(lam)
        w = np.linalg.eigvalsh(Q)
        assert w[0] > 0 and w[-1] <= 1 / lam * (1 + 1e-12)
    with pytest.raises(ValueError):
        o.q(0.0)


def test_nonconvexity_witness():
    o = scalar_oracle()
    grid = np.geomspace(10.0, 1000.0, 200)
    h = np.array([population_hessian(o, lam) for lam in grid])
    assert np.any(h < 0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), lam=st.floats(1e-3, 1e2))
def test_gradient_sign_property(seed, lam):
    o = random_oracle(seed, d=4, K=3)
    g = population_gradient(o, lam)
    if abs(lam - o.lambda_star) > 1e-6 * o.lambda_star:
        assert np.sign(g) == np.sign(lam - o.lambda_star)
