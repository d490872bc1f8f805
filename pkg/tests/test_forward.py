import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bilevel_tikhonov.eikonal import fast_marching
from bilevel_tikhonov.forward import (
    ClampWarning,
    DarcyForward,
    LinearForward,
    ObservationOperator,
    SignalForward,
    build_linear_A,
    darcy_forward,
    darcy_solve,
    eikonal_forward,
    laplace_forward,
    nearest_observation,
    observe,
    random_observation,
    signal_sample,
)
from bilevel_tikhonov.prior import Mesh, assemble_laplacian, build_covariance


def test_laplace_eigenfunction_identity():
    mesh = Mesh(2, 20)
    cov = build_covariance(mesh, 1.0, 0.0, 1.0)
    phi, mu = cov.eigenvectors[:, 0], cov.laplacian_eigenvalues[0]
    p = laplace_forward(mesh, phi)
    assert np.abs(p - phi / mu).max() <= 1e-10 * np.abs(phi / mu).max()


def test_laplace_zero_source():
    mesh = Mesh(1, 10)
    np.testing.assert_array_equal(laplace_forward(mesh, np.zeros(mesh.size)), 0.0)


def test_laplace_quadratic_exact_in_1d():
    mesh = Mesh(1, 17)
    x = mesh.dof_axis()
    p = laplace_forward(mesh, np.ones(mesh.size))
    np.testing.assert_allclose(p, x * (1 - x) / 2, atol=1e-12)


def test_laplace_needs_dirichlet():
    with pytest.raises(ValueError):
        laplace_forward(Mesh(1, 5, "neumann"), np.ones(5))


def test_linear_A_matches_forward_then_select():
    mesh = Mesh(2, 12)
    obs = random_observation(mesh, 15, np.random.default_rng(0))
    A = build_linear_A(mesh, obs)
    fw = LinearForward.laplace(mesh, obs, 0.0)
    u = np.random.default_rng(1).standard_normal(mesh.size)
    y = observe(fw, fw.state(u), np.random.default_rng(2))
    np.testing.assert_allclose(A @ u, y, atol=1e-12)
    np.testing.assert_allclose(fw.predict(u), y, atol=1e-12)


def test_observation_operator():
    obs = ObservationOperator([2, 0], 4)
    np.testing.assert_array_equal(obs.matrix(), [[0, 0, 1, 0], [1, 0, 0, 0]])
    assert np.all(obs.matrix().sum(axis=1) == 1)
    with pytest.raises(ValueError):
        ObservationOperator([], 4)
    with pytest.raises(ValueError):
        ObservationOperator([4], 4)


def test_nearest_observation():
    mesh = Mesh(1, 11)
    obs = nearest_observation(mesh, [0.31, 0.5])
    np.testing.assert_allclose(mesh.dof_axis()[obs.indices], [0.3, 0.5])
    with pytest.raises(ValueError):
        nearest_observation(mesh, [1.5])


def test_random_observation_distinct():
    mesh = Mesh(2, 10)
    obs = random_observation(mesh, 30, np.random.default_rng(5))
    assert np.unique(obs.indices).size == 30
    with pytest.raises(ValueError):
        random_observation(mesh, mesh.size + 1, np.random.default_rng(5))


def test_observe_noise_and_determinism():
    fw = SignalForward.identity(50, 0.3)
    u = np.linspace(0, 1, 50)
    a = observe(fw, u, np.random.default_rng(7))
    b = observe(fw, u, np.random.default_rng(7))
    assert a.tobytes() == b.tobytes()
    assert np.std(a - u) == pytest.approx(0.3, rel=0.3)
    exact = observe(SignalForward.identity(50, 0.0), u, np.random.default_rng(7))
    np.testing.assert_array_equal(exact, u)
    with pytest.raises(ValueError):
        SignalForward.identity(3, -1.0)


# -- Darcy ----------------------------------------------------------------


def test_darcy_zero_coefficients_is_poisson():
    pm = Mesh(2, 12)
    cov = build_covariance(Mesh(2, 12, "neumann"), 10.0, 3.0, 2.0)
    p = darcy_forward(pm, np.zeros(5), 1.0, cov)
    np.testing.assert_allclose(p, laplace_forward(pm, np.ones(pm.size)), rtol=1e-10)


def _manufactured(nodes):
    x = np.linspace(0, 1, nodes)
    X, Y = np.meshgrid(x, x, indexing="ij")
    a = np.exp(X + Y)
    pi = math.pi
    f = -a * (pi * np.cos(pi * X) * np.sin(pi * Y) + pi * np.sin(pi * X) * np.cos(pi * Y)
              - 2 * pi**2 * np.sin(pi * X) * np.sin(pi * Y))
    p = darcy_solve(nodes, X + Y, f[1:-1, 1:-1].ravel())
    exact = (np.sin(pi * X) * np.sin(pi * Y))[1:-1, 1:-1].ravel()
    return np.abs(p - exact).max()


def test_darcy_manufactured_second_order():
    errs = [_manufactured(n) for n in (17, 33, 65)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    assert all(3.0 <= r <= 5.0 for r in ratios), ratios


def test_darcy_linear_in_source_and_positive():
    pm = Mesh(2, 10)
    cov = build_covariance(Mesh(2, 10, "neumann"), 10.0, 3.0, 2.0)
    xi = np.random.default_rng(0).standard_normal(5)
    p1 = darcy_forward(pm, xi, 1.0, cov)
    p2 = darcy_forward(pm, xi, 2.0, cov)
    np.testing.assert_allclose(p2, 2 * p1, rtol=1e-12)
    assert np.all(p1 > 0)


def test_darcy_clamp_and_nonfinite():
    with pytest.warns(ClampWarning):
        p = darcy_solve(6, np.full((6, 6), 50.0), 1.0)
    assert np.all(np.isfinite(p))
    bad = np.zeros((6, 6))
    bad[2, 3] = np.nan
    with pytest.raises(FloatingPointError, match="node"):
        darcy_solve(6, bad, 1.0)


def test_darcy_forward_class_checks_terms():
    pm = Mesh(2, 8)
    cov = build_covariance(Mesh(2, 8, "neumann"), 10.0, 3.0, 2.0)
    fw = DarcyForward(ObservationOperator(np.arange(4), pm.size), 0.01, mesh=pm, covariance=cov, terms=3)
    assert fw.predict(np.zeros(3)).shape == (4,)
    with pytest.raises(ValueError):
        fw.state(np.zeros(4))


# -- eikonal --------------------------------------------------------------


def test_eikonal_1d_three_nodes():
    h = 0.5
    T = fast_marching(np.full(3, 2.0), h, 0)
    np.testing.assert_allclose(T, [0.0, 2 * h, 4 * h])


def test_eikonal_constant_slowness_distance():
    n = 64
    h = 1.0 / (n - 1)
    src = (31, 31)
    T = fast_marching(np.ones((n, n)), h, src)
    x = np.arange(n) * h
    X, Y = np.meshgrid(x, x, indexing="ij")
    dist = np.hypot(X - x[31], Y - x[31])
    assert T[src] == 0.0
    assert np.abs(T - dist).max() <= h


def test_eikonal_acceptance_order_monotone():
    rng = np.random.default_rng(3)
    s = np.exp(0.5 * rng.standard_normal((20, 20)))
    T, order = fast_marching(s, 1 / 19, (4, 11), return_order=True)
    assert np.all(np.diff(order) >= 0)
    assert np.all(np.isfinite(T)) and np.all(T >= 0)


def test_eikonal_rejects_bad_slowness():
    s = np.ones((5, 5))
    s[1, 1] = 0.0
    with pytest.raises(ValueError, match="node"):
        fast_marching(s, 0.25, (0, 0))


def test_eikonal_forward_source_zero():
    mesh = Mesh(2, 12)
    cov = build_covariance(Mesh(2, 12), 1.0, 0.1, 2.0)
    T = eikonal_forward(mesh, np.ones(5), (5, 5), cov)
    assert T[5, 5] == 0.0
    assert T.shape == (12, 12)


@settings(max_examples=20, deadline=None)
@given(scale=st.floats(0.2, 5.0), i=st.integers(0, 9), j=st.integers(0, 9))
def test_eikonal_scales_with_slowness(scale, i, j):
    s = np.exp(np.random.default_rng(i * 10 + j).standard_normal((10, 10)) * 0.3)
    T1 = fast_marching(s, 0.1, (i, j))
    T2 = fast_marching(scale * s, 0.1, (i, j))
    np.testing.assert_allclose(T2, scale * T1, rtol=1e-10, atol=1e-14)


# -- signal ---------------------------------------------------------------


def test_signal_zero_rate():
    np.testing.assert_array_equal(signal_sample(0.0, 1.0, 100, np.random.default_rng(0)), 0.0)


def test_signal_jump_count_mean():
    rng = np.random.default_rng(11)
    counts = [signal_sample(10.0, 1.0, 50, rng, return_jumps=True)[1].size for _ in range(2000)]
    assert abs(np.mean(counts) - 10.0) <= 3 * math.sqrt(10.0 / 2000)


def test_signal_piecewise_constant():
    u, times, jumps = signal_sample(10.0, 1.0, 400, np.random.default_rng(4), return_jumps=True)
    t = np.arange(1, 401) / 400
    changes = np.flatnonzero(np.diff(np.concatenate([[0.0], u])))
    for k in changes:
        lo = t[k - 1] if k else 0.0
        assert np.any((times > lo) & (times <= t[k]))
    assert u[-1] == pytest.approx(jumps.sum())


def test_signal_arguments():
    with pytest.raises(ValueError):
        signal_sample(-1.0, 1.0, 10, np.random.default_rng(0))
    with pytest.raises(ValueError):
        signal_sample(1.0, 1.0, 0, np.random.default_rng(0))


def test_laplacian_matches_forward_inverse():
    mesh = Mesh(1, 9)
    lap = assemble_laplacian(mesh).toarray()
    u = np.random.default_rng(0).standard_normal(mesh.size)
    np.testing.assert_allclose(lap @ laplace_forward(mesh, u), u, atol=1e-10)
