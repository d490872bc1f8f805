"""Lower-level Tikhonov solves and their derivatives in the regularization weight.

Every model exposes ``minimize(y, lam, init=None) -> (u, converged)`` and
``dlambda(y, lam, u=None)`` so the bilevel layer can treat them uniformly.
Linear and signal models accept a leading batch axis on ``y``; their spectral
solves also take one weight per batch row.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.linalg as sla

__all__ = [
    "LowerSolveError",
    "LowerSolveReport",
    "LinearTikhonov",
    "SignalTikhonov",
    "NonlinearTikhonov",
    "solve_linear",
    "solve_signal",
    "solve_nonlinear",
    "dlambda_u_exact",
    "dlambda_u_central",
]


class LowerSolveError(ArithmeticError):
    """A lower-level problem could not be solved."""


def _spd_inverse_check(mat: np.ndarray, lam: float) -> None:
    w = np.linalg.eigvalsh(mat)
    cond = math.inf if w[0] <= 0 else w[-1] / w[0]
    raise LowerSolveError(
        f"lower-level system not SPD at lambda={lam:g} "
        f"(smallest eigenvalue {w[0]:.3e}, condition estimate {cond:.3e})"
    )


def _spd_solve(mat: np.ndarray, rhs: np.ndarray, lam: float) -> np.ndarray:
    """Cholesky solve with a symmetric eigen-solve fallback."""
    try:
        return sla.cho_solve(sla.cho_factor(mat, lower=True, check_finite=False), rhs)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(mat)
        if w[0] <= 1e-14 * max(abs(w[-1]), 1.0):
            _spd_inverse_check(mat, lam)
        return v @ ((v.T @ rhs) / (w[:, None] if rhs.ndim == 2 else w))


def _rows(lam):
    """Per-row weights broadcast against a ``(batch, d)`` array."""
    lam = np.asarray(lam, dtype=float)
    return lam[..., None] if lam.ndim else lam


@dataclass(frozen=True, eq=False)
class LinearTikhonov:
    """Quadratic lower level ``1/2 |A u - y|_Gamma^2 + lam/2 u^T Omega u``.

    ``Omega`` is the prior precision ``C0^{-1}``.
    """

    A: np.ndarray
    noise_cov: np.ndarray
    prior_precision: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        gam = np.atleast_2d(np.asarray(self.noise_cov, dtype=float))
        om = np.atleast_2d(np.asarray(self.prior_precision, dtype=float))
        if gam.shape != (A.shape[0],) * 2 or om.shape != (A.shape[1],) * 2:
            raise ValueError("inconsistent shapes for A, Gamma and the prior precision")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "noise_cov", gam)
        object.__setattr__(self, "prior_precision", om)

    @classmethod
    def from_covariances(cls, A, noise_cov, prior_cov) -> LinearTikhonov:
        prior_cov = np.atleast_2d(np.asarray(prior_cov, dtype=float))
        return cls(A, noise_cov, np.linalg.inv(prior_cov))

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @cached_property
    def data_map(self) -> np.ndarray:
        """``A^T Gamma^{-1}``, shape ``(d, K)``."""
        return sla.solve(self.noise_cov, self.A, assume_a="pos").T

    @cached_property
    def normal_matrix(self) -> np.ndarray:
        return self.data_map @ self.A

    @cached_property
    def spectral(self):
        """Generalized eigenpairs ``H v = s Omega v`` with ``V^T Omega V = I``."""
        s, V = sla.eigh(self.normal_matrix, self.prior_precision)
        return np.clip(s, 0.0, None), V

    def system(self, lam: float) -> np.ndarray:
        return self.normal_matrix + lam * self.prior_precision

    def _rhs(self, y) -> np.ndarray:
        return np.asarray(y, dtype=float) @ self.data_map.T

    def solve(self, y, lam: float, method: str = "cholesky") -> np.ndarray:
        """``u_lam(y) = (A^T Gamma^{-1} A + lam Omega)^{-1} A^T Gamma^{-1} y``."""
        if np.any(np.asarray(lam) <= 0):
            raise ValueError(f"lambda must be positive, got {lam}")
        b = self._rhs(y)
        if method == "spectral":
            s, V = self.spectral
            return ((b @ V) / (s + _rows(lam))) @ V.T
        if method != "cholesky":
            raise ValueError(f"unknown method {method!r}")
        return _spd_solve(self.system(lam), b.T, lam).T

    def minimize(self, y, lam, init=None):
        return self.solve(y, lam, method="spectral"), True

    def dlambda(self, y, lam: float, u=None, method: str = "cholesky") -> np.ndarray:
        """``-(A^T Gamma^{-1} A + lam Omega)^{-1} Omega u_lam(y)``."""
        if method == "spectral":
            s, V = self.spectral
            return -((self._rhs(y) @ V) / (s + _rows(lam)) ** 2) @ V.T
        if u is None:
            u = self.solve(y, lam)
        return -_spd_solve(self.system(lam), (np.asarray(u) @ self.prior_precision).T, lam).T

    def objective(self, u, y, lam) -> float:
        r = self.A @ u - y
        return 0.5 * float(r @ sla.solve(self.noise_cov, r)) + 0.5 * lam * float(u @ self.prior_precision @ u)

    def gradient(self, u, y, lam) -> np.ndarray:
        return self.data_map @ (self.A @ u - y) + lam * self.prior_precision @ u


@dataclass(frozen=True, eq=False)
class SignalTikhonov:
    """Denoising estimator ``u_lam(y) = (Gamma^{-1} + lam L^{-1})^{-1} Gamma^{-1} y``."""

    noise_cov: np.ndarray
    L: np.ndarray

    def __post_init__(self):
        gam = np.atleast_2d(np.asarray(self.noise_cov, dtype=float))
        L = np.atleast_2d(np.asarray(self.L, dtype=float))
        if gam.shape != L.shape:
            raise ValueError("Gamma and L must have the same shape")
        object.__setattr__(self, "noise_cov", gam)
        object.__setattr__(self, "L", L)

    @classmethod
    def from_inverse(cls, noise_cov, L_inv) -> SignalTikhonov:
        """Build from ``L^{-1}`` directly (e.g. ``-Delta_h`` when ``L = Delta^{-1}``)."""
        L_inv = np.atleast_2d(np.asarray(L_inv, dtype=float))
        try:
            L = np.linalg.inv(L_inv)
        except np.linalg.LinAlgError as exc:
            raise LowerSolveError("L^{-1} is singular") from exc
        obj = cls(noise_cov, L)
        obj.__dict__["L_inv"] = 0.5 * (L_inv + L_inv.T)
        return obj

    @cached_property
    def L_inv(self) -> np.ndarray:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                lu = sla.lu_factor(self.L, check_finite=False)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise LowerSolveError("regularization matrix L is singular") from exc
        if np.any(np.abs(np.diag(lu[0])) <= 1e-14 * np.abs(lu[0]).max()):
            raise LowerSolveError("regularization matrix L is singular")
        inv = sla.lu_solve(lu, np.eye(self.L.shape[0]))
        return 0.5 * (inv + inv.T)

    @cached_property
    def noise_precision(self) -> np.ndarray:
        inv = np.linalg.inv(self.noise_cov)
        return 0.5 * (inv + inv.T)

    @cached_property
    def spectral(self):
        """``L^{-1} v = s Gamma^{-1} v`` with ``V^T Gamma^{-1} V = I``."""
        s, V = sla.eigh(self.L_inv, self.noise_precision)
        return s, V

    def solve(self, y, lam: float, method: str = "cholesky") -> np.ndarray:
        if np.any(np.asarray(lam) < 0):
            raise ValueError(f"lambda must be nonnegative, got {lam}")
        y = np.asarray(y, dtype=float)
        if method == "spectral":
            s, V = self.spectral
            return (((y @ self.noise_precision) @ V) / (1.0 + _rows(lam) * s)) @ V.T
        if lam == 0:
            return y.copy()
        mat = self.noise_precision + lam * self.L_inv
        return _spd_solve(mat, (y @ self.noise_precision).T, lam).T

    def minimize(self, y, lam, init=None):
        return self.solve(y, lam, method="spectral"), True

    def dlambda(self, y, lam: float, u=None, method: str = "spectral") -> np.ndarray:
        """``-(Gamma^{-1} + lam L^{-1})^{-1} L^{-1} u_lam(y)``."""
        y = np.asarray(y, dtype=float)
        if method == "spectral":
            s, V = self.spectral
            return -(((y @ self.noise_precision) @ V) * s / (1.0 + _rows(lam) * s) ** 2) @ V.T
        if u is None:
            u = self.solve(y, lam)
        mat = self.noise_precision + lam * self.L_inv
        return -_spd_solve(mat, (np.asarray(u) @ self.L_inv).T, lam).T


@dataclass
class LowerSolveReport:
    minimizer: np.ndarray
    iterations: int
    gradient_norm: float
    objective: float
    converged: bool
    warm_started: bool = False

    def to_json(self) -> str:
        d = asdict(self)
        d["minimizer"] = self.minimizer.tolist()
        return json.dumps(d)


@dataclass(frozen=True, eq=False)
class NonlinearTikhonov:
    """``1/2 |G(xi) - y|_Gamma^2 + lam/2 |xi|^2`` over KL coefficients.

    Damped Gauss-Newton with a forward-difference Jacobian and a halving line
    search.
    """

    forward: Callable[[np.ndarray], np.ndarray]
    noise_cov: np.ndarray
    dim: int
    tol: float = 1e-6
    max_iters: int = 50
    fd_step: float = 1e-6
    noise_precision: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        gam = np.atleast_2d(np.asarray(self.noise_cov, dtype=float))
        object.__setattr__(self, "noise_cov", gam)
        object.__setattr__(self, "noise_precision", np.linalg.inv(gam))

    def _predict(self, xi):
        g = np.asarray(self.forward(xi), dtype=float)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("forward solve returned non-finite values")
        return g

    def jacobian(self, xi, g0=None) -> np.ndarray:
        g0 = self._predict(xi) if g0 is None else g0
        J = np.empty((g0.size, self.dim))
        for i in range(self.dim):
            step = np.array(xi, dtype=float)
            step[i] += self.fd_step
            J[:, i] = (self._predict(step) - g0) / self.fd_step
        return J

    def objective(self, xi, y, lam, g=None) -> float:
        r = (self._predict(xi) if g is None else g) - y
        return 0.5 * float(r @ self.noise_precision @ r) + 0.5 * lam * float(xi @ xi)

    def solve(self, y, lam: float, init=None, max_iters: int | None = None, tol: float | None = None) -> LowerSolveReport:
        max_iters = self.max_iters if max_iters is None else max_iters
        tol = self.tol if tol is None else tol
        W = self.noise_precision
        xi = np.zeros(self.dim) if init is None else np.array(init, dtype=float)
        g = self._predict(xi)
        obj = self.objective(xi, y, lam, g)
        grad_norm = math.inf
        converged = False
        it = 0
        for it in range(max_iters + 1):
            J = self.jacobian(xi, g)
            grad = J.T @ W @ (g - y) + lam * xi
            grad_norm = float(np.linalg.norm(grad))
            if grad_norm <= tol:
                converged = True
                break
            if it == max_iters:
                break
            H = J.T @ W @ J + lam * np.eye(self.dim)
            delta = _spd_solve(H, -grad, lam)
            t = 1.0
            for _ in range(30):
                trial = xi + t * delta
                g_trial = self._predict(trial)
                obj_trial = self.objective(trial, y, lam, g_trial)
                if obj_trial < obj:
                    break
                t *= 0.5
            else:
                break
            xi, g, obj = trial, g_trial, obj_trial
        return LowerSolveReport(xi, it, grad_norm, obj, converged, warm_started=init is not None)

    def minimize(self, y, lam, init=None):
        rep = self.solve(y, lam, init=init)
        return rep.minimizer, rep.converged

    def dlambda(self, y, lam: float, u=None) -> np.ndarray:
        """Gauss-Newton implicit derivative ``-(J^T Gamma^{-1} J + lam I)^{-1} xi_lam``."""
        if u is None:
            u = self.solve(y, lam).minimizer
        J = self.jacobian(u)
        H = J.T @ self.noise_precision @ J + lam * np.eye(self.dim)
        w = np.linalg.eigvalsh(H)
        if w[0] <= 0:
            raise LowerSolveError(f"Gauss-Newton Hessian not SPD (smallest eigenvalue {w[0]:.3e})")
        return -_spd_solve(H, u, lam)


def solve_linear(model: LinearTikhonov, y, lam: float) -> np.ndarray:
    return model.solve(y, lam)


def solve_signal(model: SignalTikhonov, y, lam: float) -> np.ndarray:
    return model.solve(y, lam, method="cholesky")


def solve_nonlinear(model: NonlinearTikhonov, y, lam: float, init=None, max_iters=None, tol=None) -> LowerSolveReport:
    return model.solve(y, lam, init=init, max_iters=max_iters, tol=tol)


def dlambda_u_exact(model, y, lam: float, u=None) -> np.ndarray:
    return model.dlambda(y, lam, u=u)


def dlambda_u_central(model, y, lam: float, h: float, u=None):
    """Central difference ``(u_{lam+h} - u_{lam-h}) / 2h``.

    Returns ``(derivative, converged)``. Nonlinear solves are warm-started
    from ``u`` (the minimizer at ``lam``) when given.
    """
    if lam - h <= 0:
        raise ValueError(f"lambda - h must stay positive (lambda={lam}, h={h})")
    up, ok_up = model.minimize(y, lam + h, init=u)
    dn, ok_dn = model.minimize(y, lam - h, init=u)
    return (up - dn) / (2.0 * h), bool(ok_up and ok_dn)
