"""Learned smoothing weight for piecewise-constant signals.

Trains lambda by bilevel SGD on noisy jump paths, then compares the learned
weight against two fixed choices and the best weight on a grid for one
held-out path.
"""
import numpy as np

from bilevel_tikhonov.bilevel import run_bsgd
from bilevel_tikhonov.experiments import build_problem
from bilevel_tikhonov.presets import load_preset


def main():
    cfg = load_preset("signal-denoise")
    problem = build_problem(cfg)
    rng = np.random.default_rng(1)
    train = problem.sample(cfg["sgd"]["n"], rng)
    trace = run_bsgd(problem.model, train.U, train.Y, problem.sgd_config())
    lam = trace.bar_lambda
    print(f"learned lambda = {lam:.3e} after {trace.n} steps")

    test = problem.sample(1, rng)
    u, y = test.U[0], test.Y[0]

    def mse(weight):
        return float(np.mean((problem.model.solve(y, weight) - u) ** 2))

    print(f"  noisy data     mse={np.mean((y - u) ** 2):.5f}")
    print(f"  learned        mse={mse(lam):.5f}")
    for fixed in cfg["study"]["fixed_lambdas"]:
        print(f"  fixed {fixed:7.0e}  mse={mse(fixed):.5f}")
    grid = np.geomspace(1e-7, 1e-1, 200)
    best = min(grid, key=mse)
    print(f"  grid optimum   mse={mse(best):.5f} at lambda={best:.3e}")


if __name__ == "__main__":
    main()
