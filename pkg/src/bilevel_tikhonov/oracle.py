"""Closed-form population risk of the linear Gaussian model.

With ``u ~ N(0, C0 / lam_star)``, ``y = A u + eta`` and ``eta ~ N(0, Gamma)``
the risk ``F(lam) = E |u_lam(y) - u|^2`` and its derivatives are traces of
rational functions of ``D D^T`` where ``D = C0^{1/2} A^T Gamma^{-1/2}``.
Everything is evaluated in the eigenbasis of ``D D^T``:

    F(lam)  = sum_a c_a q_a^2 (lam^2 / lam_star + l_a)
    F'(lam) = (1 - lam / lam_star) Tr(P2 D D^T)

with ``q_a = 1 / (l_a + lam)`` and ``c_a`` the diagonal of ``C0`` in that
basis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "LinearOracle",
    "population_loss",
    "population_gradient",
    "population_hessian",
    "convexity_region_bounds",
    "ConvexityBounds",
]


def _sym_sqrt(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(mat)
    if w[0] <= 0:
        raise ValueError("matrix square root needs an SPD matrix")
    return (v * np.sqrt(w)) @ v.T


@dataclass(frozen=True, eq=False)
class LinearOracle:
    """Spectral data of the linear model.

    Attributes
    ----------
    spectrum : ndarray
        Eigenvalues ``l_a`` of ``D D^T``, ascending.
    basis : ndarray
        Matching orthonormal eigenvectors.
    prior_in_basis : ndarray
        ``U^T C0 U``.
    """

    A: np.ndarray
    noise_cov: np.ndarray
    prior_cov: np.ndarray
    lambda_star: float
    D: np.ndarray
    spectrum: np.ndarray
    basis: np.ndarray
    prior_in_basis: np.ndarray

    @classmethod
    def build(cls, A, noise_cov, prior_cov, lambda_star: float) -> LinearOracle:
        A = np.atleast_2d(np.asarray(A, dtype=float))
        gam = np.atleast_2d(np.asarray(noise_cov, dtype=float))
        c0 = np.atleast_2d(np.asarray(prior_cov, dtype=float))
        if lambda_star <= 0:
            raise ValueError("lambda_star must be positive")
        D = _sym_sqrt(c0) @ A.T @ np.linalg.inv(_sym_sqrt(gam))
        ell, U = np.linalg.eigh(D @ D.T)
        ell = np.clip(ell, 0.0, None)
        return cls(A, gam, c0, float(lambda_star), D, ell, U, U.T @ c0 @ U)

    @property
    def lambda_D(self) -> float:
        return float(self.spectrum[-1])

    @property
    def normal_norm(self) -> float:
        """Spectral norm of ``A^T Gamma^{-1} A``."""
        H = self.A.T @ np.linalg.solve(self.noise_cov, self.A)
        return float(np.linalg.eigvalsh(H)[-1])

    def q(self, lam: float) -> np.ndarray:
        if lam <= 0:
            raise ValueError(f"lambda must be positive, got {lam}")
        return 1.0 / (self.spectrum + lam)

    def Q(self, lam: float) -> np.ndarray:
        """``(D D^T + lam I)^{-1}`` in the original coordinates."""
        U = self.basis
        return (U * self.q(lam)) @ U.T

    def p_matrices(self, lam: float):
        """``P2 = -(Q^2 C0 Q + Q C0 Q^2)`` and its ``lam``-derivative ``P3``."""
        Q = self.Q(lam)
        C = self.prior_cov
        Q2 = Q @ Q
        Q3 = Q2 @ Q
        P2 = -(Q2 @ C @ Q + Q @ C @ Q2)
        P3 = 2.0 * (Q3 @ C @ Q + Q2 @ C @ Q2 + Q @ C @ Q3)
        return P2, P3

    def _diag(self) -> np.ndarray:
        return np.diag(self.prior_in_basis)

    def loss(self, lam: float) -> float:
        q = self.q(lam)
        return float(np.sum(self._diag() * q**2 * (lam**2 / self.lambda_star + self.spectrum)))

    def trace_p2(self, lam: float) -> float:
        """``Tr(P2 D D^T)``; always nonpositive."""
        q = self.q(lam)
        return float(-2.0 * np.sum(self.spectrum * q**3 * self._diag()))

    def gradient(self, lam: float) -> float:
        return (1.0 - lam / self.lambda_star) * self.trace_p2(lam)

    def hessian(self, lam: float) -> float:
        q = self.q(lam)
        w = self.spectrum * self._diag()
        r = 1.0 - lam / self.lambda_star
        return float(np.sum(w * (6.0 * r * q**4 + 2.0 * q**3 / self.lambda_star)))


def population_loss(oracle: LinearOracle, lam: float) -> float:
    return oracle.loss(lam)


def population_gradient(oracle: LinearOracle, lam: float) -> float:
    return oracle.gradient(lam)


def population_hessian(oracle: LinearOracle, lam: float) -> float:
    return oracle.hessian(lam)


@dataclass(frozen=True)
class ConvexityBounds:
    H_star: float
    L_star: float
    region: tuple


def convexity_region_bounds(oracle: LinearOracle, lambda_u: float) -> ConvexityBounds:
    """Curvature and slope lower bounds around ``lam_star``.

    ``H*`` bounds the Hessian from below on ``[5/6, 7/6] lam_star`` and ``L*``
    bounds ``|F'|`` away from that region, both with high probability for the
    empirical risk.
    """
    lD = oracle.lambda_D
    ls = oracle.lambda_star
    nn = oracle.normal_norm
    H = lD**2 / ((lD + 2.0 * ls) ** 2 * ls * nn)
    L = 2.0 * lD**2 / (3.0 * (lD + lambda_u) ** 3 * nn)
    return ConvexityBounds(H, L, (5.0 * ls / 6.0, 7.0 * ls / 6.0))

