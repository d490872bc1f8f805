"""Learning the Tikhonov weight from training pairs.

Offline: minimize the empirical risk ``F_n(lam) = mean_j |u_lam(y_j) - u_j|^2``
over an interval. Online: projected stochastic gradient descent with either
the implicit-function gradient or a central-difference approximation.

Both gradients carry the factor 2 of ``d/dw |w - u|^2`` so that they estimate
the same quantity.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .lower import LinearTikhonov, LowerSolveError, NonlinearTikhonov, SignalTikhonov

__all__ = [
    "LambdaInterval",
    "SgdConfig",
    "SgdTrace",
    "SgdFailure",
    "OfflineResult",
    "upper_loss",
    "upper_loss_gradient",
    "empirical_loss",
    "LinearRiskStatistics",
    "golden_section",
    "offline_minimize",
    "offline_estimate",
    "sgd_gradient_exact",
    "sgd_gradient_approx",
    "run_bsgd",
    "run_bsgd_many",
    "cn_sequence",
    "epoch_order",
]

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class LambdaInterval:
    lower: float = 1e-4
    upper: float = 10.0

    def __post_init__(self):
        if not 0 < self.lower < self.upper:
            raise ValueError(f"need 0 < lower < upper, got [{self.lower}, {self.upper}]")

    def project(self, lam):
        """Closest point of the interval."""
        return np.clip(lam, self.lower, self.upper)

    def __contains__(self, lam) -> bool:
        return self.lower <= lam <= self.upper

    def __str__(self) -> str:
        return f"[{self.lower:g}, {self.upper:g}]"


def upper_loss(w, u):
    """``|w - u|^2`` along the last axis."""
    return np.sum((np.asarray(w) - np.asarray(u)) ** 2, axis=-1)


def upper_loss_gradient(w, u):
    return 2.0 * (np.asarray(w) - np.asarray(u))


# -- offline --------------------------------------------------------------


def empirical_loss(model, U, Y, lam: float, inits=None) -> float:
    """Empirical risk at ``lam``; nonlinear models are solved pair by pair."""
    U = np.atleast_2d(U)
    Y = np.atleast_2d(Y)
    if U.shape[0] == 0:
        raise ValueError("empirical loss needs at least one training pair")
    if isinstance(model, (LinearTikhonov, SignalTikhonov)):
        return float(np.mean(upper_loss(model.minimize(Y, lam)[0], U)))
    total = 0.0
    for j in range(U.shape[0]):
        try:
            w, _ = model.minimize(Y[j], lam, init=None if inits is None else inits[j])
        except (LowerSolveError, FloatingPointError) as exc:
            raise LowerSolveError(f"lower solve failed for pair {j}: {exc}") from exc
        total += float(upper_loss(w, U[j]))
    return total / U.shape[0]


class LinearRiskStatistics:
    """Empirical risk of a linear model from sufficient statistics.

    With generalized eigenpairs ``(s, V)`` and ``c_j = V^T A^T Gamma^{-1} y_j``
    the risk is a rational function of ``lam`` whose coefficients are
    ``d x d`` moment matrices, so each evaluation is ``O(d^2)`` regardless of
    ``n``.
    """

    def __init__(self, model: LinearTikhonov, U, Y):
        U = np.atleast_2d(np.asarray(U, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if U.shape[0] == 0:
            raise ValueError("empirical loss needs at least one training pair")
        s, V = model.spectral
        n = U.shape[0]
        C = (Y @ model.data_map.T) @ V
        E = U @ V
        self.s = s
        self.gram = V.T @ V
        self.second = C.T @ C / n
        self.cross = np.einsum("ja,ja->a", E, C) / n
        self.norm = float(np.sum(U * U)) / n

    def __call__(self, lam: float) -> float:
        q = 1.0 / (self.s + lam)
        quad = float(q @ (self.gram * self.second) @ q)
        return quad - 2.0 * float(self.cross @ q) + self.norm


@dataclass
class OfflineResult:
    lam: float
    loss: float
    at_boundary: bool
    evaluations: int


def golden_section(fun, a: float, b: float, width: float = 1e-8):
    """Minimize a unimodal function on ``[a, b]``; returns ``(x, f(x), evals)``."""
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    evals = 2
    while b - a > width:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = fun(d)
        evals += 1
    x = 0.5 * (a + b)
    return x, fun(x), evals + 1


def offline_minimize(fun, interval: LambdaInterval, grid_size: int = 64, width: float = 1e-8) -> OfflineResult:
    """Grid-bracketed golden-section minimization over the interval.

    A 64-point log grid locates the best cell, and golden section refines
    inside the neighbouring cells. The risk need not be convex globally.
    """
    grid = np.geomspace(interval.lower, interval.upper, grid_size)
    vals = np.array([fun(x) for x in grid])
    i = int(np.argmin(vals))
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, grid_size - 1)]
    x, fx, evals = golden_section(fun, a, b, width)
    if vals[i] < fx:
        x, fx = float(grid[i]), float(vals[i])
    at_boundary = bool(min(x - interval.lower, interval.upper - x) <= 2 * width)
    return OfflineResult(float(x), float(fx), at_boundary, evals + grid_size)


def offline_estimate(model, U, Y, interval: LambdaInterval) -> OfflineResult:
    """ERM estimate of the regularization weight from a training set."""
    if isinstance(model, LinearTikhonov):
        return offline_minimize(LinearRiskStatistics(model, U, Y), interval)
    return offline_minimize(lambda lam: empirical_loss(model, U, Y, lam), interval)


# -- stochastic gradients -------------------------------------------------


def sgd_gradient_exact(model, u, y, lam: float, w=None):
    """``2 (u_lam(y) - u)^T d_lam u_lam(y)``; batched for linear models."""
    if w is None:
        w, _ = model.minimize(y, lam)
    if isinstance(model, NonlinearTikhonov):
        du = model.dlambda(y, lam, u=w)
    else:
        du = model.dlambda(y, lam, method="spectral")
    return np.sum(upper_loss_gradient(w, u) * du, axis=-1)


def sgd_gradient_approx(model, u, y, lam, h, w=None, variant: str = "split"):
    """Central-difference stochastic gradient.

    ``variant="split"`` differences only ``u_lam``:
    ``2 (u_lam - u)^T (u_{lam+h} - u_{lam-h}) / 2h``. ``variant="generic"``
    differences the whole loss: ``(f(lam+h) - f(lam-h)) / 2h``.

    Returns ``(gradient, ok)``; ``ok`` is False when ``h`` had to be halved
    to keep ``lam - h`` positive or a nonlinear solve did not converge.
    Linear models take one ``lam`` per batch row.
    """
    lam_a = np.asarray(lam, dtype=float)
    h_a = np.broadcast_to(np.asarray(h, dtype=float), lam_a.shape)
    shrink = lam_a - h_a <= 0
    h_a = np.where(shrink, 0.5 * lam_a, h_a)
    ok = ~shrink
    if lam_a.ndim == 0:
        lam_a, h_a, ok = float(lam_a), float(h_a), bool(ok)
    warm = isinstance(model, NonlinearTikhonov)
    if w is None:
        w, conv = model.minimize(y, lam_a)
        ok = ok & conv
    up, ok_up = model.minimize(y, lam_a + h_a, init=w if warm else None)
    dn, ok_dn = model.minimize(y, lam_a - h_a, init=w if warm else None)
    ok = ok & ok_up & ok_dn
    if variant == "generic":
        g = (upper_loss(up, u) - upper_loss(dn, u)) / (2.0 * h_a)
    elif variant == "split":
        g = np.sum(upper_loss_gradient(w, u) * (up - dn), axis=-1) / (2.0 * h_a)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return g, ok


# -- online ---------------------------------------------------------------


@dataclass(frozen=True)
class SgdConfig:
    """Schedules for projected bilevel SGD.

    Steps are ``beta_k = beta0 k^-exponent`` for ``k = 1, 2, ...``. With
    ``cap`` the step becomes ``min(beta0, lambda0 / |g_k|) k^-exponent`` so a
    single move never exceeds ``lambda0 / k``. ``h_decay="beta"`` shrinks the
    difference step as ``h0 (beta_k / beta_1)^(1/4)``.
    """

    beta0: float
    lambda0: float
    interval: LambdaInterval = field(default_factory=LambdaInterval)
    exponent: float = 1.0
    cap: bool = False
    h0: float = 0.01
    h_decay: str = "fixed"
    m: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.beta0 <= 0:
            raise ValueError("beta0 must be positive")
        if not 0.5 < self.exponent <= 1.0:
            raise ValueError(f"exponent {self.exponent} violates the Robbins-Monro range (1/2, 1]")
        if self.lambda0 not in self.interval:
            raise ValueError(f"lambda0={self.lambda0} outside the interval {self.interval}")
        if self.m < 1:
            raise ValueError("averaging window m must be >= 1")
        if self.h_decay not in ("fixed", "beta"):
            raise ValueError(f"unknown h_decay {self.h_decay!r}")
        if self.h0 <= 0:
            raise ValueError("h0 must be positive")

    def step_size(self, k: int) -> float:
        return self.beta0 * k ** (-self.exponent)

    def difference_step(self, k: int) -> float:
        if self.h_decay == "fixed":
            return self.h0
        return self.h0 * k ** (-self.exponent / 4.0)


class SgdFailure(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class SgdTrace:
    """Iterates ``lambda_0..lambda_n`` and per-step diagnostics."""

    iterates: np.ndarray
    gradients: np.ndarray
    steps: np.ndarray
    indices: np.ndarray
    m: int
    skipped: int = 0
    flagged: int = 0

    @property
    def n(self) -> int:
        return self.iterates.size - 1

    @property
    def bar_lambda(self) -> float:
        return self.tail_average()

    def tail_average(self, n: int | None = None, m: int | None = None) -> float:
        """Mean of ``lambda_{n-m+1..n}``."""
        n = self.n if n is None else n
        m = self.m if m is None else m
        m = min(m, n)
        return float(np.mean(self.iterates[n - m + 1 : n + 1]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "lambda", "gradient", "step", "data_index"])
        w.writerow([0, repr(float(self.iterates[0])), "", "", ""])
        for k in range(self.n):
            w.writerow(
                [
                    k + 1,
                    repr(float(self.iterates[k + 1])),
                    repr(float(self.gradients[k])),
                    repr(float(self.steps[k])),
                    int(self.indices[k]),
                ]
            )
        return buf.getvalue()

    def summary(self, config: SgdConfig | None = None) -> dict:
        out = {
            "bar_lambda": self.bar_lambda,
            "n": self.n,
            "m": self.m,
            "skipped": self.skipped,
            "flagged": self.flagged,
        }
        if config is not None:
            out["config"] = json.loads(json.dumps(asdict(config)))
        return out


def epoch_order(size: int, n: int, seed: int) -> np.ndarray:
    """Data indices for ``n`` steps over reshuffled passes through ``size`` pairs."""
    if size < 1:
        raise ValueError("need at least one pair")
    rng = np.random.default_rng(seed)
    passes = -(-n // size)
    return np.concatenate([rng.permutation(size) for _ in range(passes)])[:n] if n else np.zeros(0, int)


def run_bsgd(model, U, Y, config: SgdConfig, kind: str = "exact", n: int | None = None,
             variant: str = "split", max_skip_fraction: float = 0.05, epochs: bool = False) -> SgdTrace:
    """Projected bilevel SGD.

    By default pairs are consumed once, in stream order. With ``epochs=True``
    the data are revisited in passes, each a fresh permutation drawn from
    ``config.seed``, and ``n`` may exceed the number of pairs.
    ``kind="exact"`` uses the implicit-function gradient, ``kind="approx"``
    the central-difference gradient. Nonlinear lower solves are warm-started
    from the previous minimizer.
    """
    U = np.atleast_2d(U)
    Y = np.atleast_2d(Y)
    n = U.shape[0] if n is None else n
    if epochs:
        order = epoch_order(U.shape[0], n, config.seed)
    elif n > U.shape[0]:
        raise ValueError(f"stream has {U.shape[0]} pairs, {n} requested")
    else:
        order = np.arange(n)
    if kind not in ("exact", "approx"):
        raise ValueError(f"unknown gradient kind {kind!r}")
    nonlinear = isinstance(model, NonlinearTikhonov)
    lam = float(config.lambda0)
    iterates = np.empty(n + 1)
    iterates[0] = lam
    grads = np.full(n, np.nan)
    steps = np.zeros(n)
    skipped = flagged = 0
    warm = None
    for k in range(n):
        u, y = U[order[k]], Y[order[k]]
        try:
            if nonlinear:
                w, ok = model.minimize(y, lam, init=warm)
                warm = w
            else:
                w, ok = model.minimize(y, lam)
            if kind == "exact":
                g = float(sgd_gradient_exact(model, u, y, lam, w=w))
            else:
                g, ok_d = sgd_gradient_approx(model, u, y, lam, config.difference_step(k + 1), w=w, variant=variant)
                g = float(g)
                ok = ok and ok_d
        except (LowerSolveError, FloatingPointError):
            g, ok = math.nan, False
        if not ok:
            flagged += 1
        if not math.isfinite(g):
            skipped += 1
            iterates[k + 1] = lam
            continue
        beta = config.step_size(k + 1)
        if config.cap and g != 0.0:
            beta = min(config.beta0, config.lambda0 / abs(g)) * (k + 1) ** (-config.exponent)
        lam = float(config.interval.project(lam - beta * g))
        iterates[k + 1] = lam
        grads[k] = g
        steps[k] = beta
    trace = SgdTrace(iterates, grads, steps, order, min(config.m, n), skipped, flagged)
    if n and skipped > max_skip_fraction * n:
        raise SgdFailure(f"{skipped} of {n} SGD steps skipped (non-finite gradient)", trace)
    return trace


def run_bsgd_many(model, U, Y, config: SgdConfig, kind: str = "exact", n: int | None = None,
                  variant: str = "split", max_skip_fraction: float = 0.05) -> list[SgdTrace]:
    """Independent SGD runs advanced in lockstep, one per leading index of ``U``.

    ``U`` and ``Y`` have shape ``(runs, n, dim)``. Only linear and signal
    models are supported; each run follows exactly the recursion of
    :func:`run_bsgd` on its own stream.
    """
    if isinstance(model, NonlinearTikhonov):
        raise TypeError("lockstep runs need a closed-form lower level")
    if kind not in ("exact", "approx"):
        raise ValueError(f"unknown gradient kind {kind!r}")
    U = np.asarray(U, dtype=float)
    Y = np.asarray(Y, dtype=float)
    runs = U.shape[0]
    n = U.shape[1] if n is None else n
    if n > U.shape[1]:
        raise ValueError(f"stream has {U.shape[1]} pairs, {n} requested")
    lam = np.full(runs, float(config.lambda0))
    iterates = np.empty((runs, n + 1))
    iterates[:, 0] = lam
    grads = np.full((runs, n), np.nan)
    steps = np.zeros((runs, n))
    skipped = np.zeros(runs, dtype=int)
    flagged = np.zeros(runs, dtype=int)
    for k in range(n):
        u, y = U[:, k], Y[:, k]
        w, _ = model.minimize(y, lam)
        if kind == "exact":
            g = sgd_gradient_exact(model, u, y, lam, w=w)
            ok = np.ones(runs, dtype=bool)
        else:
            g, ok = sgd_gradient_approx(model, u, y, lam, config.difference_step(k + 1), w=w, variant=variant)
        flagged += ~ok
        good = np.isfinite(g)
        skipped += ~good
        beta = np.full(runs, config.step_size(k + 1))
        if config.cap:
            with np.errstate(divide="ignore"):
                capped = np.where(g != 0, config.lambda0 / np.abs(g), np.inf)
            beta = np.minimum(config.beta0, capped) * (k + 1) ** (-config.exponent)
        moved = config.interval.project(lam - beta * np.where(good, g, 0.0))
        lam = np.where(good, moved, lam)
        iterates[:, k + 1] = lam
        grads[:, k] = np.where(good, g, np.nan)
        steps[:, k] = np.where(good, beta, 0.0)
    traces = [
        SgdTrace(iterates[r], grads[r], steps[r], np.arange(n), min(config.m, n), int(skipped[r]), int(flagged[r]))
        for r in range(runs)
    ]
    for r, tr in enumerate(traces):
        if n and tr.skipped > max_skip_fraction * n:
            raise SgdFailure(f"run {r}: {tr.skipped} of {n} SGD steps skipped (non-finite gradient)", tr)
    return traces


def cn_sequence(betas, a: float, c: float) -> np.ndarray:
    """``C_n = min_{k<=n} max(prod_{j=k+1}^n (1 - c beta_j), a beta_k / c)``.

    ``betas[j-1]`` holds ``beta_j``; factors ``1 - c beta_j`` are floored at 0.
    Assumes a nonincreasing step sequence, so the product term increases in
    ``k`` and the step term decreases; the min-max sits at their crossing.
    """
    b = np.asarray(betas, dtype=float)
    N = b.size
    fac = np.clip(1.0 - c * b, 0.0, None)
    with np.errstate(divide="ignore"):
        logs = np.log(fac)
    cum = np.concatenate([[0.0], np.cumsum(logs)])  # cum[j] = sum_{i<=j} log fac_i
    step = a * b / c
    out = np.empty(N)
    for n in range(1, N + 1):
        # product over j = k+1..n for k = 1..n
        ks = np.arange(1, n + 1)
        with np.errstate(invalid="ignore"):
            prod = np.exp(cum[n] - cum[ks])
        prod[np.isnan(prod)] = 0.0
        out[n - 1] = np.min(np.maximum(prod, step[:n]))
    return out
