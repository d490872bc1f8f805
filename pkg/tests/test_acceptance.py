"""Acceptance suite: one PASS/FAIL line per criterion, with its runtime.

Run with ``pytest -s tests/test_acceptance.py`` to see the report lines.
"""
import math
import os
import time

import numpy as np

from bilevel_tikhonov.bilevel import sgd_gradient_approx, sgd_gradient_exact
from bilevel_tikhonov.eikonal import fast_marching
from bilevel_tikhonov.experiments import (
    build_problem,
    check_reproducible,
    consistency_study,
    denoise_study,
    dimension_study,
    online_study,
)
from bilevel_tikhonov.forward import darcy_solve, laplace_forward
from bilevel_tikhonov.lower import LinearTikhonov, dlambda_u_central, dlambda_u_exact
from bilevel_tikhonov.oracle import (
    LinearOracle,
    convexity_region_bounds,
    population_gradient,
    population_hessian,
)
from bilevel_tikhonov.presets import load_preset
from bilevel_tikhonov.prior import Mesh, build_covariance

THREADS = os.cpu_count() or 1


def report(number, title, checks, started, budget):
    """Print the criterion line, then assert every check and the budget."""
    elapsed = time.perf_counter() - started
    checks = dict(checks)
    checks[f"runtime {elapsed:.1f}s <= {budget}s"] = elapsed <= budget
    ok = all(checks.values())
    failed = [name for name, good in checks.items() if not good]
    detail = "; ".join(checks) if ok else "failed: " + "; ".join(failed)
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({detail})")
    assert ok, failed


def random_linear(rng, d=None, K=None):
    d = d or int(rng.integers(2, 12))
    K = K or int(rng.integers(1, 12))
    A = rng.standard_normal((K, d))
    G = rng.standard_normal((K, K))
    C = rng.standard_normal((d, d))
    return A, G @ G.T + 0.3 * np.eye(K), C @ C.T / d + 0.2 * np.eye(d)


def test_criterion_1_offline_consistency_rate():
    t0 = time.perf_counter()
    checks = {}
    for name in ("scalar", "small-matrix"):
        res = consistency_study(load_preset(name), threads=THREADS)
        slope = res.summary["slope"]
        checks[f"{name} slope {slope:.2f} in [-1.3, -0.7]"] = -1.3 <= slope <= -0.7
    report(1, "offline consistency rate", checks, t0, 120)


def test_criterion_2_stationarity_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    grads, hess = [], []
    for _ in range(10):
        ls = float(rng.uniform(0.1, 3.0))
        o = LinearOracle.build(*random_linear(rng), ls)
        grads.append(abs(population_gradient(o, ls)))
        hess.append(population_hessian(o, ls))
    scalar = LinearOracle.build(np.eye(1), np.eye(1), np.eye(1), 1.0)
    b = convexity_region_bounds(scalar, lambda_u=10.0)
    checks = {
        f"max |F'(lambda*)| {max(grads):.1e} <= 1e-12": max(grads) <= 1e-12,
        "F''(lambda*) > 0": min(hess) > 0,
        f"H* {b.H_star:.6f} == 1/9": math.isclose(b.H_star, 1 / 9, rel_tol=1e-12),
        "L* == 2/(3 * 11^3)": math.isclose(b.L_star, 2 / (3 * 11**3), rel_tol=1e-12),
        "lambda_D == 1": math.isclose(scalar.lambda_D, 1.0, rel_tol=1e-12),
    }
    report(2, "stationarity oracle", checks, t0, 1)


def test_criterion_3_gradient_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        model = LinearTikhonov.from_covariances(*random_linear(rng))
        y = rng.standard_normal(model.A.shape[0])
        lam = float(rng.uniform(0.2, 3.0))
        exact = dlambda_u_exact(model, y, lam)
        approx, _ = dlambda_u_central(model, y, lam, 1e-5)
        worst = max(worst, np.linalg.norm(approx - exact) / np.linalg.norm(exact))
    model = LinearTikhonov.from_covariances(*random_linear(np.random.default_rng(33), d=4, K=6))
    U = rng.standard_normal((200, 4))
    Y = U @ model.A.T + rng.standard_normal((200, 6))
    g = sgd_gradient_exact(model, U, Y, 0.5)
    bias = [abs(np.mean(sgd_gradient_approx(model, U, Y, 0.5, h)[0] - g)) for h in (0.02, 0.01)]
    ratio = bias[0] / bias[1]
    checks = {
        f"worst relative error {worst:.1e} <= 1e-6": worst <= 1e-6,
        f"bias ratio {ratio:.3f} in [3.5, 4.5]": 3.5 <= ratio <= 4.5,
    }
    report(3, "gradient correctness", checks, t0, 10)


def test_criterion_4_unbiased_stochastic_gradient():
    t0 = time.perf_counter()
    problem = build_problem(load_preset("scalar"))
    data = problem.sample(10**5, np.random.default_rng(4))
    ls = problem.lambda_star
    checks = {}
    for mult in (0.5, 1.0, 2.0):
        lam = mult * ls
        g = sgd_gradient_exact(problem.model, data.U, data.Y, lam)
        se = g.std(ddof=1) / np.sqrt(g.size)
        closed = 2 * (lam / ls - 1) / (1 + lam) ** 3
        z = abs(g.mean() - closed) / se
        checks[f"lambda={lam:g}: |mean - dF| = {z:.2f} se <= 4"] = z <= 4
    report(4, "unbiased stochastic gradient", checks, t0, 30)


def test_criterion_5_online_convergence():
    t0 = time.perf_counter()
    cfg = load_preset("scalar")
    checks = {}
    final = {}
    for kind, decay in (("exact", "fixed"), ("approx", "fixed"), ("approx", "beta")):
        res = online_study(cfg, kind=kind, n=10**4, seeds=50, checkpoints=(1000,), h0=0.01, h_decay=decay)
        late, early = res.summary["median_sq_error"], res.summary["median_sq_error_1000"]
        final[(kind, decay)] = res
        if decay == "fixed":
            checks[f"{kind}: median {late:.1e} <= 1/3 * {early:.1e}"] = late <= early / 3
    a, b = final[("approx", "fixed")], final[("approx", "beta")]
    diff = abs(a.summary["median_sq_error"] - b.summary["median_sq_error"])
    iqr = a.summary["iqr_sq_error"]
    checks[f"fixed vs decaying h differ by {diff:.1e} < IQR {iqr:.1e}"] = diff < iqr
    report(5, "online convergence", checks, t0, 300)


def test_criterion_6_dimension_independence():
    t0 = time.perf_counter()
    res = dimension_study(load_preset("laplace1d-dim"), threads=THREADS)
    checks = {f"n={n}: max/min MSE {r:.2f} <= 2": r <= 2 for n, r in res.summary["flatness"].items()}
    report(6, "dimension independence", checks, t0, 300)


def test_criterion_7_nonlinear_end_to_end():
    t0 = time.perf_counter()
    checks = {}
    for name in ("darcy2d", "eikonal2d"):
        cfg = load_preset(name)
        res = online_study(cfg, seeds=10, threads=THREADS)
        ls, l0 = cfg["prior"]["lambda_star"], cfg["sgd"]["lambda0"]
        hits = np.mean([abs(r["bar_lambda"] - ls) <= 0.5 * abs(l0 - ls) for r in res.rows])
        checks[f"{name}: {hits:.0%} of seeds within half the initial gap (>= 80%)"] = hits >= 0.8
    report(7, "nonlinear end-to-end", checks, t0, 900)


def test_criterion_8_denoising_ordering():
    t0 = time.perf_counter()
    res = denoise_study(load_preset("signal-denoise"), threads=THREADS)
    beats, within = res.summary["fraction_beats_fixed"], res.summary["fraction_within_1.15"]
    checks = {
        f"beats both fixed weights in {beats:.0%} (>= 80%)": beats >= 0.8,
        f"within 1.15x of grid optimum in {within:.0%} (>= 80%)": within >= 0.8,
    }
    report(8, "denoising ordering", checks, t0, 180)


def _manufactured_error(nodes):
    x = np.linspace(0, 1, nodes)
    X, Y = np.meshgrid(x, x, indexing="ij")
    a = np.exp(X + Y)
    pi = math.pi
    f = -a * (pi * np.cos(pi * X) * np.sin(pi * Y) + pi * np.sin(pi * X) * np.cos(pi * Y)
              - 2 * pi**2 * np.sin(pi * X) * np.sin(pi * Y))
    p = darcy_solve(nodes, X + Y, f[1:-1, 1:-1].ravel())
    return np.abs(p - (np.sin(pi * X) * np.sin(pi * Y))[1:-1, 1:-1].ravel()).max()


def test_criterion_9_solver_verification():
    t0 = time.perf_counter()
    n = 64
    h = 1.0 / (n - 1)
    T = fast_marching(np.ones((n, n)), h, (31, 31))
    x = np.arange(n) * h
    X, Y = np.meshgrid(x, x, indexing="ij")
    eik = np.abs(T - np.hypot(X - x[31], Y - x[31])).max()
    errs = [_manufactured_error(k) for k in (17, 33, 65)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    mesh = Mesh(2, 20)
    cov = build_covariance(mesh, 1.0, 0.0, 1.0)
    phi, mu = cov.eigenvectors[:, 0], cov.laplacian_eigenvalues[0]
    lap = np.abs(laplace_forward(mesh, phi) - phi / mu).max() / np.abs(phi / mu).max()
    checks = {
        f"eikonal max error {eik:.4f} <= h = {h:.4f}": eik <= h,
        f"Darcy refinement ratios {ratios[0]:.2f}, {ratios[1]:.2f} in [3, 5]": all(3 <= r <= 5 for r in ratios),
        f"Laplace eigenfunction identity {lap:.1e} <= 1e-10": lap <= 1e-10,
    }
    report(9, "solver verification", checks, t0, 60)


def test_criterion_10_reproducibility():
    t0 = time.perf_counter()
    small = {"threads": THREADS}
    runs = {
        "consistency": (consistency_study, load_preset("small-matrix"), dict(small, n_list=[10, 100], repetitions=20)),
        "dimension": (dimension_study, load_preset("laplace1d-dim"), dict(small, n_list=[50], repetitions=10)),
        "online": (online_study, load_preset("scalar"), dict(small, n=500, seeds=5)),
        "denoise": (denoise_study, load_preset("signal-denoise", overrides=["forward.grid=200", "sgd.n=50"]),
                    dict(small, seeds=3)),
    }
    checks = {}
    for name, (study, cfg, kwargs) in runs.items():
        same, _ = check_reproducible(study, cfg, **kwargs)
        checks[f"{name} CSV byte-identical"] = same
    report(10, "reproducibility", checks, t0, 600)
