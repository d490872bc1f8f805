"""Scalar walkthrough: population loss, offline estimate and bilevel SGD.

With A = Gamma = C0 = 1 and lambda* = 1 the population loss is
F(lam) = (1 + lam^2) / (1 + lam)^2, minimized at lam = 1. The script shows
that offline ERM and online SGD both recover it.
"""
import numpy as np

from bilevel_tikhonov.bilevel import offline_estimate, run_bsgd
from bilevel_tikhonov.experiments import build_problem
from bilevel_tikhonov.oracle import convexity_region_bounds
from bilevel_tikhonov.presets import load_preset


def main():
    cfg = load_preset("scalar")
    problem = build_problem(cfg)
    oracle = problem.oracle()
    print("population loss and gradient")
    for lam in (0.25, 0.5, 1.0, 2.0, 4.0):
        print(f"  lam={lam:5.2f}  F={oracle.loss(lam):.5f}  F'={oracle.gradient(lam):+.5f}")
    bounds = convexity_region_bounds(oracle, lambda_u=cfg["sgd"]["lambda_u"])
    lo, hi = bounds.region
    print(f"strong convexity on [{lo:.3f}, {hi:.3f}], H* = {bounds.H_star:.4f}")

    rng = np.random.default_rng(0)
    print("\noffline estimates")
    for n in (10, 100, 1000, 10000):
        data = problem.sample(n, rng)
        res = offline_estimate(problem.model, data.U, data.Y, problem.interval)
        print(f"  n={n:6d}  lam_hat={res.lam:.4f}  boundary={res.at_boundary}")

    print("\nbilevel SGD, one fresh pair per step")
    data = problem.sample(cfg["sgd"]["n"], rng)
    trace = run_bsgd(problem.model, data.U, data.Y, problem.sgd_config())
    for k in (10, 100, 1000, 10000):
        print(f"  k={k:6d}  lam_k={trace.iterates[k]:.4f}  tail mean={trace.tail_average(k):.4f}")


if __name__ == "__main__":
    main()
