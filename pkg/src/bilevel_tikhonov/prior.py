"""Discretized Gaussian-field priors on uniform grids.

The prior covariance is ``C0 = beta * (tau^2 I - Laplacian)^(-alpha)`` on the
unit interval or unit square. Grid functions live on mesh nodes and the mesh
inner product is ``h^dim * <u, v>``; eigenvectors are orthonormal in that
product so that they approximate the continuum eigenfunctions.

Samples are drawn from the truncated Karhunen-Loeve expansion

    u = sum_{i <= d} xi_i * sqrt(sigma_i / lambda_star) * phi_i

with unit-variance symmetric coefficients ``xi_i``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Mesh",
    "CovarianceModel",
    "KlPrior",
    "SpdViolationError",
    "assemble_laplacian",
    "build_covariance",
    "kl_sample",
    "save_covariance",
    "load_covariance",
]

COEFFICIENT_LAWS = ("gaussian", "uniform", "rademacher")


class SpdViolationError(ValueError):
    """Raised when a covariance operator would not be positive definite."""


@dataclass(frozen=True)
class Mesh:
    """Uniform grid on [0, 1]^dim.

    ``nodes`` counts grid points per axis including the boundary. Dirichlet
    meshes carry unknowns on interior nodes only; Neumann meshes on every node.
    """

    dimension: int
    nodes: int
    boundary: str = "dirichlet"

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dimension}")
        if self.nodes < 2:
            raise ValueError(f"need at least 2 nodes per axis, got {self.nodes}")
        if self.boundary not in ("dirichlet", "neumann"):
            raise ValueError(f"unknown boundary condition {self.boundary!r}")
        if self.dofs_per_axis < 1:
            raise ValueError("Dirichlet mesh needs at least 3 nodes per axis")

    @property
    def spacing(self) -> float:
        return 1.0 / (self.nodes - 1)

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.nodes)

    @property
    def dofs_per_axis(self) -> int:
        return self.nodes - 2 if self.boundary == "dirichlet" else self.nodes

    @property
    def size(self) -> int:
        """Number of degrees of freedom ``d``."""
        return self.dofs_per_axis**self.dimension

    @property
    def weight(self) -> float:
        """Quadrature weight of the mesh inner product."""
        return self.spacing**self.dimension

    def dof_axis(self) -> np.ndarray:
        x = self.axis
        return x[1:-1] if self.boundary == "dirichlet" else x

    def coordinates(self) -> np.ndarray:
        """Coordinates of the degrees of freedom, shape ``(d, dim)``.

        2D unknowns are ordered row-major with ``x`` the slow index.
        """
        x = self.dof_axis()
        if self.dimension == 1:
            return x[:, None]
        gx, gy = np.meshgrid(x, x, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])

    def full_grid_shape(self) -> tuple[int, ...]:
        return (self.nodes,) * self.dimension

    def to_full_grid(self, values: np.ndarray) -> np.ndarray:
        """Embed dof values into the full node grid, zero on a Dirichlet boundary."""
        values = np.asarray(values, dtype=float)
        n = self.dofs_per_axis
        if self.boundary == "neumann":
            return values.reshape(self.full_grid_shape())
        out = np.zeros(self.full_grid_shape())
        if self.dimension == 1:
            out[1:-1] = values
        else:
            out[1:-1, 1:-1] = values.reshape(n, n)
        return out

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(self.weight * np.dot(u, v))

    def describe(self) -> dict:
        return {"dimension": self.dimension, "nodes": self.nodes, "boundary": self.boundary}


def _laplacian_1d(mesh: Mesh) -> sp.csr_matrix:
    n = mesh.dofs_per_axis
    h2 = mesh.spacing**2
    main = np.full(n, 2.0)
    if mesh.boundary == "neumann":
        # graph Laplacian of the path: symmetric, constants in the kernel
        main[0] = main[-1] = 1.0
    off = -np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") / h2


def assemble_laplacian(mesh: Mesh) -> sp.csr_matrix:
    """Negative discrete Laplacian ``-Delta_h`` on the mesh degrees of freedom.

    Second-order centered differences; 2D is the Kronecker sum of the 1D
    operators. SPD for Dirichlet, PSD with constant null vector for Neumann.
    """
    lap = _laplacian_1d(mesh)
    if mesh.dimension == 1:
        return lap
    eye = sp.identity(mesh.dofs_per_axis, format="csr")
    return (sp.kron(lap, eye) + sp.kron(eye, lap)).tocsr()


def _fix_signs(vectors: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Make the first non-negligible entry of every column positive."""
    idx = np.argmax(np.abs(vectors) > tol * np.abs(vectors).max(axis=0), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


@dataclass(frozen=True, eq=False)
class CovarianceModel:
    """Eigen-representation of ``C0 = beta (tau^2 I - Delta_h)^(-alpha)``.

    Attributes
    ----------
    eigenvalues : ndarray
        Operator eigenvalues ``sigma_i``, descending.
    eigenvectors : ndarray
        Columns ``phi_i`` on mesh dofs, orthonormal in the mesh inner product.
    laplacian_eigenvalues : ndarray
        Matching eigenvalues ``mu_i`` of ``-Delta_h``.
    """

    beta: float
    tau: float
    alpha: float
    mesh: Mesh
    eigenvalues: np.ndarray = field(repr=False)
    eigenvectors: np.ndarray = field(repr=False)
    laplacian_eigenvalues: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.eigenvalues.size

    @property
    def trace(self) -> float:
        """Operator trace ``sum_i sigma_i`` (mesh independent in the limit)."""
        return float(self.eigenvalues.sum())

    @property
    def matrix(self) -> np.ndarray:
        """Nodal covariance ``Phi diag(sigma) Phi^T`` of a KL sample with ``lambda_star = 1``."""
        phi = self.eigenvectors
        return (phi * self.eigenvalues) @ phi.T

    @property
    def precision(self) -> np.ndarray:
        """Inverse of :attr:`matrix`."""
        w = self.mesh.weight
        phi = self.eigenvectors
        return (phi / self.eigenvalues) @ phi.T * w**2

    def sqrt_factor(self, truncation: int | None = None) -> np.ndarray:
        """Columns ``sqrt(sigma_i) phi_i`` for the leading ``truncation`` modes."""
        k = self.size if truncation is None else truncation
        return self.eigenvectors[:, :k] * np.sqrt(self.eigenvalues[:k])


def build_covariance(mesh: Mesh, beta: float, tau: float, alpha: float) -> CovarianceModel:
    """Eigendecompose the discretized covariance operator on ``mesh``."""
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if tau < 0:
        raise ValueError(f"tau must be nonnegative, got {tau}")
    lap = assemble_laplacian(mesh).toarray()
    mu, vecs = np.linalg.eigh(lap)
    mu = np.clip(mu, 0.0, None) if mesh.boundary == "neumann" else mu
    shifted = tau**2 + mu
    if np.any(shifted <= 1e-12 * max(1.0, mu.max())):
        raise SpdViolationError(
            f"tau^2 I - Delta_h is singular (tau={tau}, boundary={mesh.boundary}); "
            "Neumann priors need tau > 0"
        )
    sigma = beta * shifted ** (-alpha)
    order = np.argsort(-sigma, kind="stable")
    vecs = _fix_signs(vecs[:, order]) / np.sqrt(mesh.weight)
    return CovarianceModel(
        beta=float(beta),
        tau=float(tau),
        alpha=float(alpha),
        mesh=mesh,
        eigenvalues=sigma[order],
        eigenvectors=vecs,
        laplacian_eigenvalues=mu[order],
    )


@dataclass(frozen=True)
class KlPrior:
    """Truncated Karhunen-Loeve prior ``N(0, C0 / lambda_star)``-like law."""

    covariance: CovarianceModel
    lambda_star: float
    truncation: int | None = None
    coefficient_law: str = "gaussian"

    def __post_init__(self):
        if self.lambda_star <= 0:
            raise ValueError("lambda_star must be positive")
        if self.truncation is not None and not 1 <= self.truncation <= self.covariance.size:
            raise ValueError(
                f"truncation {self.truncation} outside [1, {self.covariance.size}]"
            )
        if self.coefficient_law not in COEFFICIENT_LAWS:
            raise ValueError(f"unknown coefficient law {self.coefficient_law!r}")

    @property
    def terms(self) -> int:
        return self.covariance.size if self.truncation is None else self.truncation

    def basis(self) -> np.ndarray:
        """Columns ``sqrt(sigma_i / lambda_star) phi_i``."""
        return self.covariance.sqrt_factor(self.terms) / np.sqrt(self.lambda_star)


def draw_coefficients(law: str, size, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean, unit-variance, symmetric i.i.d. coefficients."""
    if law == "gaussian":
        return rng.standard_normal(size)
    if law == "uniform":
        return rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size)
    if law == "rademacher":
        return rng.choice(np.array([-1.0, 1.0]), size=size)
    raise ValueError(f"unknown coefficient law {law!r}")


def kl_sample(prior: KlPrior, rng: np.random.Generator, size: int | None = None):
    """Draw KL samples.

    Returns ``(u, xi)``; with ``size`` given both carry a leading sample axis.
    """
    shape = (prior.terms,) if size is None else (size, prior.terms)
    xi = draw_coefficients(prior.coefficient_law, shape, rng)
    u = xi @ prior.basis().T
    return u, xi


def save_covariance(model: CovarianceModel, path) -> None:
    """Write ``<path>.json`` (header) and ``<path>.npz`` (eigenpairs)."""
    path = Path(path)
    header = {
        "beta": model.beta,
        "tau": model.tau,
        "alpha": model.alpha,
        "mesh": model.mesh.describe(),
        "boundary": model.mesh.boundary,
        "payload": path.with_suffix(".npz").name,
    }
    path.with_suffix(".json").write_text(json.dumps(header, indent=2, sort_keys=True))
    np.savez(
        path.with_suffix(".npz"),
        eigenvalues=model.eigenvalues,
        eigenvectors=model.eigenvectors,
        laplacian_eigenvalues=model.laplacian_eigenvalues,
    )


def load_covariance(path) -> CovarianceModel:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    payload = np.load(path.with_name(header["payload"]))
    return CovarianceModel(
        beta=header["beta"],
        tau=header["tau"],
        alpha=header["alpha"],
        mesh=Mesh(**header["mesh"]),
        eigenvalues=payload["eigenvalues"],
        eigenvectors=payload["eigenvectors"],
        laplacian_eigenvalues=payload["laplacian_eigenvalues"],
    )
