"""Learning Tikhonov regularization weights from training data.

Offline empirical-risk minimization and online (approximate) bilevel SGD for
linear and PDE-constrained inverse problems, with closed-form population
oracles for the linear Gaussian case and Monte Carlo study drivers.
"""
__version__ = "0.1.0"

from .prior import CovarianceModel, KlPrior, Mesh, SpdViolationError, assemble_laplacian, build_covariance, kl_sample
from .lower import LinearTikhonov, LowerSolveError, NonlinearTikhonov, SignalTikhonov
from .bilevel import LambdaInterval, SgdConfig, SgdTrace, offline_estimate, run_bsgd
from .oracle import LinearOracle, convexity_region_bounds

__all__ = [
    "__version__",
    "Mesh",
    "CovarianceModel",
    "KlPrior",
    "SpdViolationError",
    "assemble_laplacian",
    "build_covariance",
    "kl_sample",
    "LinearTikhonov",
    "SignalTikhonov",
    "NonlinearTikhonov",
    "LowerSolveError",
    "LambdaInterval",
    "SgdConfig",
    "SgdTrace",
    "offline_estimate",
    "run_bsgd",
    "LinearOracle",
    "convexity_region_bounds",
]
