"""Forward maps and noisy pointwise observations.

Four models are provided:

* ``LinearForward``: ``A = O (-Delta_h)^{-1}`` for the Poisson problem with
  homogeneous Dirichlet data (five-point stencil; on uniform grids it matches
  P1 finite elements up to the load scaling).
* ``DarcyForward``: ``-div(exp(u) grad p) = f`` with harmonic face averages.
* ``EikonalForward``: ``|grad T| = exp(u)``, ``T(x0) = 0`` by fast marching.
* ``SignalForward``: identity observation of a compound Poisson path.

Nonlinear models are parametrized by KL coefficients ``xi`` with
``u = sum_i xi_i sqrt(sigma_i) phi_i``; the coefficients carry the unknown
precision ``lambda_star``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .eikonal import fast_marching
from .prior import CovarianceModel, Mesh, assemble_laplacian

__all__ = [
    "ObservationOperator",
    "ClampWarning",
    "LinearForward",
    "DarcyForward",
    "EikonalForward",
    "SignalForward",
    "random_observation",
    "nearest_observation",
    "laplace_forward",
    "build_linear_A",
    "darcy_solve",
    "darcy_forward",
    "eikonal_forward",
    "signal_sample",
    "observe",
]

LOG_CLAMP = 40.0


class ClampWarning(RuntimeWarning):
    """A log-coefficient exceeded the exponent guard and was clamped."""


@dataclass(frozen=True, eq=False)
class ObservationOperator:
    """Pointwise evaluation at selected degrees of freedom."""

    indices: np.ndarray
    size: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=int)
        if idx.ndim != 1 or idx.size < 1:
            raise ValueError("need at least one observation index")
        if idx.min() < 0 or idx.max() >= self.size:
            raise ValueError(f"observation index outside [0, {self.size})")
        object.__setattr__(self, "indices", idx)

    @property
    def count(self) -> int:
        return self.indices.size

    def matrix(self) -> np.ndarray:
        out = np.zeros((self.count, self.size))
        out[np.arange(self.count), self.indices] = 1.0
        return out

    def __call__(self, state: np.ndarray) -> np.ndarray:
        return np.asarray(state)[..., self.indices]


def random_observation(mesh: Mesh, count: int, rng: np.random.Generator) -> ObservationOperator:
    """Uniform draw of ``count`` distinct degrees of freedom."""
    if count > mesh.size:
        raise ValueError(f"cannot observe {count} of {mesh.size} nodes")
    idx = np.sort(rng.choice(mesh.size, size=count, replace=False))
    return ObservationOperator(idx, mesh.size)


def nearest_observation(mesh: Mesh, points) -> ObservationOperator:
    """Select the degree of freedom nearest to each point."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if mesh.dimension == 1 and pts.shape[0] == 1 and pts.shape[1] != 1:
        pts = pts.T
    if np.any(pts < 0) or np.any(pts > 1):
        raise ValueError("observation point outside the unit domain")
    coords = mesh.coordinates()
    d2 = ((pts[:, None, :] - coords[None, :, :]) ** 2).sum(axis=-1)
    return ObservationOperator(np.argmin(d2, axis=1), mesh.size)


def _check_gamma(gamma: float) -> float:
    if gamma < 0:
        raise ValueError("noise level gamma must be nonnegative")
    return float(gamma)


def laplace_forward(mesh: Mesh, source: np.ndarray) -> np.ndarray:
    """Solve ``-Delta_h p = u`` with ``p = 0`` on the boundary."""
    if mesh.boundary != "dirichlet":
        raise ValueError("the Poisson forward problem needs a Dirichlet mesh")
    return spla.spsolve(assemble_laplacian(mesh).tocsc(), np.asarray(source, dtype=float))


def build_linear_A(mesh: Mesh, observation: ObservationOperator) -> np.ndarray:
    """``A = O (-Delta_h)^{-1}`` from solves with indicator right-hand sides."""
    lap = assemble_laplacian(mesh).tocsc()
    rhs = observation.matrix().T
    cols = spla.splu(lap).solve(rhs)
    # the operator is symmetric, so rows of A are solves against e_k
    return np.ascontiguousarray(cols.T)


def _guard_log(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        bad = int(np.flatnonzero(~np.isfinite(u.ravel()))[0])
        raise FloatingPointError(f"non-finite log-coefficient at node {bad}")
    big = np.abs(u) > LOG_CLAMP
    if big.any():
        warnings.warn(
            f"clamped {int(big.sum())} log-coefficients to +-{LOG_CLAMP}", ClampWarning, stacklevel=3
        )
        u = np.clip(u, -LOG_CLAMP, LOG_CLAMP)
    return u


def darcy_solve(nodes: int, log_permeability: np.ndarray, source) -> np.ndarray:
    """Pressure on interior nodes for ``-div(exp(u) grad p) = f``, ``p = 0`` on the boundary.

    ``log_permeability`` is given on the full ``nodes x nodes`` grid; ``source``
    is a scalar or an array on interior nodes.
    """
    u = _guard_log(np.asarray(log_permeability).reshape(nodes, nodes))
    a = np.exp(u)
    h2 = (1.0 / (nodes - 1)) ** 2
    # harmonic averages on x-faces (i+1/2, j) and y-faces (i, j+1/2)
    ax = 2.0 * a[1:, :] * a[:-1, :] / (a[1:, :] + a[:-1, :])
    ay = 2.0 * a[:, 1:] * a[:, :-1] / (a[:, 1:] + a[:, :-1])
    m = nodes - 2
    east = ax[1:, 1:-1]
    west = ax[:-1, 1:-1]
    north = ay[1:-1, 1:]
    south = ay[1:-1, :-1]
    diag = (east + west + north + south).ravel()
    k = np.arange(m * m).reshape(m, m)
    rows = [k.ravel()]
    cols = [k.ravel()]
    vals = [diag]
    for coef, shift in ((east[:-1, :], (1, 0)), (north[:, :-1], (0, 1))):
        src = k[: m - shift[0], : m - shift[1]].ravel()
        dst = k[shift[0]:, shift[1]:].ravel()
        c = -coef.ravel()
        rows += [src, dst]
        cols += [dst, src]
        vals += [c, c]
    mat = sp.csc_matrix(
        (np.concatenate(vals) / h2, (np.concatenate(rows), np.concatenate(cols))), shape=(m * m, m * m)
    )
    rhs = np.broadcast_to(np.asarray(source, dtype=float), (m * m,)).copy()
    p = spla.spsolve(mat, rhs)
    if not np.all(np.isfinite(p)):
        raise FloatingPointError("Darcy solve produced non-finite pressure")
    return p


def _kl_field(covariance: CovarianceModel, coefficients: np.ndarray) -> np.ndarray:
    xi = np.asarray(coefficients, dtype=float)
    return covariance.sqrt_factor(xi.size) @ xi


def darcy_forward(mesh: Mesh, coefficients, source, covariance: CovarianceModel) -> np.ndarray:
    """Pressure for KL log-permeability ``u = sum_i xi_i sqrt(sigma_i) phi_i``."""
    u = covariance.mesh.to_full_grid(_kl_field(covariance, coefficients))
    return darcy_solve(mesh.nodes, u, source)


def eikonal_forward(mesh: Mesh, coefficients, source_node, covariance: CovarianceModel, **kw) -> np.ndarray:
    """Travel time on the full grid for slowness ``exp(u)``."""
    u = covariance.mesh.to_full_grid(_kl_field(covariance, coefficients))
    return fast_marching(np.exp(_guard_log(u)), mesh.spacing, source_node, **kw)


def signal_sample(rate: float, horizon: float, size: int, rng: np.random.Generator, return_jumps: bool = False):
    """Compound Poisson path with standard normal jumps on ``t_i = i T / d``.

    The path is right-continuous and piecewise constant.
    """
    if rate < 0 or horizon <= 0 or size < 1:
        raise ValueError("need rate >= 0, horizon > 0, size >= 1")
    count = rng.poisson(rate * horizon)
    times = np.sort(rng.uniform(0.0, horizon, count))
    jumps = rng.standard_normal(count)
    grid = horizon * np.arange(1, size + 1) / size
    cum = np.concatenate([[0.0], np.cumsum(jumps)])
    u = cum[np.searchsorted(times, grid, side="right")]
    if return_jumps:
        return u, times, jumps
    return u


@dataclass(frozen=True, eq=False)
class _Forward:
    observation: ObservationOperator
    gamma: float

    @property
    def noise_cov(self) -> np.ndarray:
        return self.gamma**2 * np.eye(self.observation.count)

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Noise-free observation ``O(state(x))``."""
        return self.observation(self.state(x))


@dataclass(frozen=True, eq=False)
class LinearForward(_Forward):
    """Linear observation model ``y = A u + eta``."""

    A: np.ndarray = field(repr=False, default=None)
    mesh: Mesh | None = None

    def __post_init__(self):
        _check_gamma(self.gamma)
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if A.shape[0] != self.observation.count:
            raise ValueError("A rows must match the observation count")
        object.__setattr__(self, "A", A)

    @classmethod
    def from_matrix(cls, A, gamma: float) -> LinearForward:
        A = np.atleast_2d(np.asarray(A, dtype=float))
        obs = ObservationOperator(np.arange(A.shape[0]), A.shape[0])
        return cls(observation=obs, gamma=gamma, A=A)

    @classmethod
    def laplace(cls, mesh: Mesh, observation: ObservationOperator, gamma: float) -> LinearForward:
        return cls(observation=observation, gamma=gamma, A=build_linear_A(mesh, observation), mesh=mesh)

    def state(self, u):
        """Pressure on the mesh, or ``A u`` for matrix-defined models."""
        if self.mesh is None:
            return np.asarray(u) @ self.A.T
        return laplace_forward(self.mesh, u)

    def predict(self, u):
        return np.asarray(u) @ self.A.T

    @property
    def normal_matrix(self) -> np.ndarray:
        """``A^T Gamma^{-1} A``."""
        if self.gamma == 0:
            raise ZeroDivisionError("noiseless model has no finite Gamma^{-1}")
        return self.A.T @ self.A / self.gamma**2


@dataclass(frozen=True, eq=False)
class DarcyForward(_Forward):
    mesh: Mesh = None
    covariance: CovarianceModel = None
    source: float = 1.0
    terms: int = 25

    def __post_init__(self):
        _check_gamma(self.gamma)
        if self.observation.size != self.mesh.size:
            raise ValueError("observation operator does not match the pressure mesh")

    def state(self, xi):
        xi = np.asarray(xi, dtype=float)
        if xi.size != self.terms:
            raise ValueError(f"expected {self.terms} coefficients, got {xi.size}")
        return darcy_forward(self.mesh, xi, self.source, self.covariance)


@dataclass(frozen=True, eq=False)
class EikonalForward(_Forward):
    mesh: Mesh = None
    covariance: CovarianceModel = None
    source_node: tuple = (0, 0)
    terms: int = 25

    def __post_init__(self):
        _check_gamma(self.gamma)
        if self.observation.size != self.mesh.nodes**2:
            raise ValueError("eikonal observations index the full node grid")

    def state(self, xi):
        xi = np.asarray(xi, dtype=float)
        if xi.size != self.terms:
            raise ValueError(f"expected {self.terms} coefficients, got {xi.size}")
        return eikonal_forward(self.mesh, xi, self.source_node, self.covariance).ravel()


@dataclass(frozen=True, eq=False)
class SignalForward(_Forward):
    """Identity observation of a length-``d`` signal."""

    def __post_init__(self):
        _check_gamma(self.gamma)

    @classmethod
    def identity(cls, size: int, gamma: float) -> SignalForward:
        return cls(observation=ObservationOperator(np.arange(size), size), gamma=gamma)

    def state(self, u):
        return np.asarray(u, dtype=float)


def observe(problem: _Forward, state: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """``y = O(state) + eta`` with ``eta ~ N(0, gamma^2 I)``.

    A leading batch axis on ``state`` is kept.
    """
    clean = problem.observation(state)
    if problem.gamma == 0:
        return np.array(clean, dtype=float)
    return clean + problem.gamma * rng.standard_normal(clean.shape)
