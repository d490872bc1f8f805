"""Monte Carlo harness: datasets, consistency and dimension studies, online
runs and the denoising comparison.

Every replication draws from its own generator seeded by
``SeedSequence([seed, tag, index])``, so results do not depend on the order
or number of worker threads.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .bilevel import LambdaInterval, SgdConfig, offline_estimate, run_bsgd, run_bsgd_many
from .forward import (
    DarcyForward,
    EikonalForward,
    LinearForward,
    ObservationOperator,
    SignalForward,
    nearest_observation,
    signal_sample,
)
from .lower import LinearTikhonov, NonlinearTikhonov, SignalTikhonov
from .oracle import LinearOracle
from .prior import KlPrior, Mesh, build_covariance, draw_coefficients, kl_sample
from .presets import preset_hash

__all__ = [
    "TrainingSet",
    "Problem",
    "StudyResult",
    "StudyFailure",
    "build_problem",
    "generate_dataset",
    "signal_regularizer",
    "fit_loglog",
    "consistency_study",
    "dimension_study",
    "online_study",
    "denoise_study",
    "check_reproducible",
]

SCHEMA_VERSION = 1
_TAGS = {"dataset": 1, "consistency": 2, "dimension": 3, "online": 4, "denoise": 5, "denoise-test": 6}


class StudyFailure(RuntimeError):
    """A study ran but violated its own validity condition."""


def _rng(seed: int, tag: str, *index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), _TAGS[tag], *map(int, index)]))


@dataclass
class TrainingSet:
    """Pairs ``(u_j, y_j)`` stacked along the first axis."""

    U: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        if self.U.shape[0] != self.Y.shape[0]:
            raise ValueError("U and Y must hold the same number of pairs")

    def __len__(self) -> int:
        return self.U.shape[0]


def signal_regularizer(size: int, horizon: float = 1.0, right_boundary: str = "free") -> np.ndarray:
    """``L^{-1} = -Delta_h`` on ``t_i = i T / d``.

    The path is pinned to zero at ``t = 0``; at ``t = T`` the end is free
    (one-sided difference) or pinned as well.
    """
    h = horizon / size
    main = np.full(size, 2.0)
    if right_boundary == "free":
        main[-1] = 1.0
    elif right_boundary != "dirichlet":
        raise ValueError(f"unknown right boundary {right_boundary!r}")
    off = -np.ones(size - 1)
    return (np.diag(main) + np.diag(off, 1) + np.diag(off, -1)) / h**2


def _center(nodes: int) -> tuple:
    c = (nodes - 1) // 2
    return (c, c)


@dataclass(eq=False)
class Problem:
    """Forward model, lower-level solver and sampler built from a preset."""

    config: dict
    forward: object
    model: object
    lambda_star: float
    interval: LambdaInterval
    covariance: object = None
    prior: KlPrior | None = None
    terms: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.config["kind"]

    @property
    def law(self) -> str:
        return self.config["prior"]["coefficient_law"]

    def sample(self, n: int, rng: np.random.Generator) -> TrainingSet:
        """``n`` i.i.d. pairs; unknowns first, then the noise."""
        kind = self.kind
        gamma = self.forward.gamma
        if kind == "matrix":
            d = self.model.dim
            scale = math.sqrt(self.config["prior"]["beta"] / self.lambda_star)
            U = scale * draw_coefficients(self.law, (n, d), rng)
            clean = self.forward.predict(U)
        elif kind == "laplace":
            U, _ = kl_sample(self.prior, rng, size=n)
            clean = self.forward.predict(U)
        elif kind in ("darcy", "eikonal"):
            U = draw_coefficients(self.law, (n, self.terms), rng) / math.sqrt(self.lambda_star)
            clean = np.empty((n, self.forward.observation.count))
            for j in range(n):
                try:
                    clean[j] = self.forward.predict(U[j])
                except (FloatingPointError, ValueError) as exc:
                    raise RuntimeError(f"forward solve failed for pair {j}: {exc}") from exc
        elif kind == "signal":
            f = self.config["forward"]
            U = np.array([signal_sample(f["rate"], f["horizon"], f["grid"], rng) for _ in range(n)])
            U = U.reshape(n, f["grid"])
            clean = U
        else:  # pragma: no cover - guarded by preset validation
            raise ValueError(kind)
        if gamma == 0:
            Y = np.array(clean, dtype=float)
        else:
            Y = clean + gamma * rng.standard_normal(clean.shape)
        return TrainingSet(np.asarray(U, dtype=float), Y)

    def sgd_config(self, **changes) -> SgdConfig:
        s = self.config["sgd"]
        args = dict(
            beta0=s["beta0"],
            lambda0=s["lambda0"],
            interval=self.interval,
            exponent=s["exponent"],
            cap=s["cap"],
            h0=s["h0"],
            h_decay=s["h_decay"],
            m=s["m"],
            seed=self.config["seed"],
        )
        args.update(changes)
        return SgdConfig(**args)

    def oracle(self) -> LinearOracle:
        if not isinstance(self.model, LinearTikhonov):
            raise TypeError("population oracle needs a linear model")
        return LinearOracle.build(
            self.model.A, self.model.noise_cov, np.linalg.inv(self.model.prior_precision), self.lambda_star
        )


def _linear_model(A, gamma, precision) -> LinearTikhonov:
    K = A.shape[0]
    if gamma == 0:
        # noiseless data: keep the solver usable with a tiny noise floor
        return LinearTikhonov(A, 1e-12 * np.eye(K), precision)
    return LinearTikhonov(A, gamma**2 * np.eye(K), precision)


def build_problem(cfg: dict, mesh_nodes: int | None = None, observation: ObservationOperator | None = None) -> Problem:
    """Assemble the forward model and lower-level solver a preset describes."""
    kind = cfg["kind"]
    pr, fw, ms = cfg["prior"], cfg["forward"], cfg["mesh"]
    lam_star = float(pr["lambda_star"])
    interval = LambdaInterval(cfg["sgd"]["lambda_l"], cfg["sgd"]["lambda_u"])
    gamma = float(fw["gamma"])
    obs_rng = np.random.default_rng(fw["observation_seed"])
    if kind == "matrix":
        d, K = int(fw["size"]), int(fw["observations"])
        if fw["matrix"] == "identity":
            if K != d:
                raise ValueError("identity forward matrix needs observations == size")
            A = np.eye(d)
        elif fw["matrix"] == "gaussian":
            A = obs_rng.standard_normal((K, d)) / math.sqrt(d)
        else:
            raise ValueError(f"unknown forward.matrix {fw['matrix']!r}")
        forward = LinearForward.from_matrix(A, gamma)
        model = _linear_model(A, gamma, np.eye(d) / pr["beta"])
        return Problem(cfg, forward, model, lam_star, interval)
    if kind == "laplace":
        mesh = Mesh(ms["dimension"], mesh_nodes or ms["nodes"], "dirichlet")
        cov = build_covariance(mesh, pr["beta"], pr["tau"], pr["alpha"])
        prior = KlPrior(cov, lam_star, pr["truncation"], pr["coefficient_law"])
        if observation is None:
            idx = np.sort(obs_rng.choice(mesh.size, size=int(fw["observations"]), replace=False))
            observation = ObservationOperator(idx, mesh.size)
        forward = LinearForward.laplace(mesh, observation, gamma)
        model = _linear_model(forward.A, gamma, cov.precision)
        return Problem(cfg, forward, model, lam_star, interval, cov, prior)
    if kind in ("darcy", "eikonal"):
        nodes = mesh_nodes or ms["nodes"]
        terms = int(pr["truncation"] or 25)
        cov = build_covariance(Mesh(2, nodes, pr["boundary"]), pr["beta"], pr["tau"], pr["alpha"])
        interior = Mesh(2, nodes, "dirichlet")
        idx = np.sort(obs_rng.choice(interior.size, size=int(fw["observations"]), replace=False))
        if kind == "darcy":
            obs = ObservationOperator(idx, interior.size)
            forward = DarcyForward(obs, gamma, mesh=interior, covariance=cov, source=fw["source"], terms=terms)
        else:
            i, j = np.divmod(idx, nodes - 2)
            obs = ObservationOperator((i + 1) * nodes + (j + 1), nodes * nodes)
            src = _center(nodes) if fw["source_node"] == "center" else tuple(fw["source_node"])
            forward = EikonalForward(obs, gamma, mesh=interior, covariance=cov, source_node=src, terms=terms)
        model = NonlinearTikhonov(forward.predict, forward.noise_cov, terms, tol=1e-6, max_iters=50)
        return Problem(cfg, forward, model, lam_star, interval, cov, terms=terms)
    if kind == "signal":
        d = int(fw["grid"])
        forward = SignalForward.identity(d, gamma)
        model = SignalTikhonov.from_inverse(gamma**2 * np.eye(d), signal_regularizer(d, fw["horizon"], fw["right_boundary"]))
        return Problem(cfg, forward, model, lam_star, interval)
    raise ValueError(f"unknown kind {kind!r}")


def generate_dataset(cfg_or_problem, n: int, rng: np.random.Generator) -> TrainingSet:
    """``n`` i.i.d. training pairs from a preset (or a built problem)."""
    problem = cfg_or_problem if isinstance(cfg_or_problem, Problem) else build_problem(cfg_or_problem)
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n == 0:
        d = problem.terms or (problem.model.dim if hasattr(problem.model, "dim") else problem.forward.observation.count)
        return TrainingSet(np.empty((0, d)), np.empty((0, problem.forward.observation.count)))
    return problem.sample(n, rng)


# -- reporting ------------------------------------------------------------


def fit_loglog(x, y):
    """OLS slope of ``log y`` on ``log x`` with its 95% half-width."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    res = stats.linregress(lx, ly)
    dof = lx.size - 2
    half = float(stats.t.ppf(0.975, dof) * res.stderr) if dof > 0 else math.nan
    return float(res.slope), half


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return None if math.isnan(v) else v
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


@dataclass
class StudyResult:
    """A table plus a summary; the CSV payload is a pure function of inputs."""

    study: str
    columns: list
    rows: list
    summary: dict
    config: dict
    seed: int
    runtime: float = 0.0
    traces: list = field(default_factory=list, repr=False)

    @property
    def preset_hash(self) -> str:
        return preset_hash(self.config)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# bilevel-tikhonov study={self.study} schema={SCHEMA_VERSION}\n")
        w = csv.writer(buf, lineterminator="\n")
        cols = list(self.columns) + ["seed", "preset_hash"]
        w.writerow(cols)
        h = self.preset_hash
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in self.columns] + [self.seed, h])
        return buf.getvalue()

    def manifest(self, status: str = "ok") -> dict:
        return _jsonable(
            {
                "status": status,
                "study": self.study,
                "package_version": __version__,
                "schema": SCHEMA_VERSION,
                "preset": self.config,
                "preset_hash": self.preset_hash,
                "seed": self.seed,
                "summary": self.summary,
                "runtime_seconds": self.runtime,
                "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            }
        )

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{self.study}.csv"
        path.write_text(self.to_csv())
        (out / "manifest.json").write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n")
        return path


def _map(fun, items, threads: int):
    if threads <= 1:
        return [fun(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fun, items))


def _mse_row(errors: np.ndarray) -> tuple:
    m = errors.size
    se = float(errors.std(ddof=1) / math.sqrt(m)) if m > 1 else math.nan
    return float(errors.mean()), se


# -- studies --------------------------------------------------------------


def consistency_study(cfg: dict, n_list=None, repetitions: int | None = None, seed: int | None = None,
                      threads: int = 1) -> StudyResult:
    """Offline estimates ``lam_hat_n`` over independent training sets.

    Rows: ``n, mse, se, repetitions, flagged, mean_lambda``. The summary holds
    the log-log slope of MSE against ``n``.
    """
    t0 = time.perf_counter()
    n_list = list(cfg["study"]["n_list"] if n_list is None else n_list)
    M = int(cfg["study"]["repetitions"] if repetitions is None else repetitions)
    seed = int(cfg["seed"] if seed is None else seed)
    problem = build_problem(cfg)
    if problem.kind not in ("matrix", "laplace", "signal"):
        raise ValueError("offline studies need a closed-form lower level")
    ls = problem.lambda_star

    def one(job):
        i, r = job
        data = problem.sample(n_list[i], _rng(seed, "consistency", i, r))
        res = offline_estimate(problem.model, data.U, data.Y, problem.interval)
        return res.lam, res.at_boundary

    jobs = [(i, r) for i in range(len(n_list)) for r in range(M)]
    out = _map(one, jobs, threads)
    rows = []
    max_flag = cfg["study"]["max_flag_fraction"]
    for i, n in enumerate(n_list):
        lams = np.array([out[i * M + r][0] for r in range(M)])
        flags = sum(out[i * M + r][1] for r in range(M))
        mse, se = _mse_row((lams - ls) ** 2)
        rows.append({"n": n, "mse": mse, "se": se, "repetitions": M, "flagged": flags, "mean_lambda": float(lams.mean())})
    slope, half = fit_loglog(n_list, [r["mse"] for r in rows])
    summary = {"slope": slope, "slope_halfwidth": half, "lambda_star": ls}
    result = StudyResult("consistency", ["n", "mse", "se", "repetitions", "flagged", "mean_lambda"], rows, summary,
                         cfg, seed, time.perf_counter() - t0)
    worst = max(r["flagged"] for r in rows) / M
    if worst > max_flag:
        raise StudyFailure(f"{worst:.0%} of estimates hit the interval boundary (limit {max_flag:.0%})")
    return result


def shared_points(coarse_nodes: int, count: int, seed: int) -> np.ndarray:
    """Observation points on interior nodes of the coarsest 1D mesh."""
    coarse = Mesh(1, coarse_nodes, "dirichlet").dof_axis()
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(coarse, size=count, replace=False))


def dimension_study(cfg: dict, mesh_nodes=None, n_list=None, repetitions: int | None = None,
                    seed: int | None = None, threads: int = 1) -> StudyResult:
    """MSE of ``lam_hat_n`` on a ladder of 1D meshes with shared observation points.

    Replication ``r`` uses the same KL coefficients and noise on every mesh;
    mesh ``h`` keeps the first ``d_h`` coefficients. One row per mesh with
    ``mse_n<n>``, ``se_n<n>`` and ``flagged_n<n>`` columns per sample size.
    """
    t0 = time.perf_counter()
    mesh_nodes = list(cfg["study"]["mesh_nodes"] if mesh_nodes is None else mesh_nodes)
    n_list = list(cfg["study"]["n_list"] if n_list is None else n_list)
    M = int(cfg["study"]["repetitions"] if repetitions is None else repetitions)
    seed = int(cfg["seed"] if seed is None else seed)
    if cfg["kind"] != "laplace" or cfg["mesh"]["dimension"] != 1:
        raise ValueError("the dimension study needs a 1D Laplace preset")
    points = shared_points(min(mesh_nodes), int(cfg["forward"]["observations"]), cfg["forward"]["observation_seed"])
    problems = []
    for nodes in mesh_nodes:
        mesh = Mesh(1, nodes, "dirichlet")
        p = build_problem(cfg, mesh_nodes=nodes, observation=nearest_observation(mesh, points[:, None]))
        problems.append(p)
    dmax = max(p.model.dim for p in problems)
    law = cfg["prior"]["coefficient_law"]
    gamma = cfg["forward"]["gamma"]
    K = points.size

    def one(job):
        i, r = job
        n = n_list[i]
        rng = _rng(seed, "dimension", i, r)
        xi = draw_coefficients(law, (n, dmax), rng)
        noise = gamma * rng.standard_normal((n, K))
        res = []
        for p in problems:
            U = xi[:, : p.model.dim] @ p.prior.basis().T
            Y = p.forward.predict(U) + noise
            est = offline_estimate(p.model, U, Y, p.interval)
            res.append((est.lam, est.at_boundary))
        return res

    jobs = [(i, r) for i in range(len(n_list)) for r in range(M)]
    out = _map(one, jobs, threads)
    rows = [
        {"nodes": nodes, "h": 1.0 / (nodes - 1), "dofs": p.model.dim, "trace": p.covariance.trace}
        for nodes, p in zip(mesh_nodes, problems)
    ]
    flat = {}
    for i, n in enumerate(n_list):
        mses = []
        for k, p in enumerate(problems):
            lams = np.array([out[i * M + r][k][0] for r in range(M)])
            flags = sum(out[i * M + r][k][1] for r in range(M))
            mse, se = _mse_row((lams - p.lambda_star) ** 2)
            mses.append(mse)
            rows[k].update({f"mse_n{n}": mse, f"se_n{n}": se, f"flagged_n{n}": flags})
        flat[str(n)] = max(mses) / min(mses)
    traces = [p.covariance.trace for p in problems]
    summary = {
        "flatness": flat,
        "trace_spread": (max(traces) - min(traces)) / min(traces),
        "points": points.tolist(),
        "repetitions": M,
    }
    cols = ["nodes", "h", "dofs", "trace"] + [f"{c}_n{n}" for n in n_list for c in ("mse", "se", "flagged")]
    return StudyResult("dimension", cols, rows, summary, cfg, seed, time.perf_counter() - t0)


def _tail_errors(traces, lam_star, n=None):
    return np.array([(t.tail_average(n) - lam_star) ** 2 for t in traces])


def online_study(cfg: dict, kind: str | None = None, n: int | None = None, seeds: int | None = None,
                 seed: int | None = None, checkpoints=(), threads: int = 1, **sgd_changes) -> StudyResult:
    """Independent SGD runs, one fresh data stream per seed.

    Rows: ``run, bar_lambda, sq_error, skipped, flagged`` plus one
    ``sq_error_<k>`` column per checkpoint ``k`` (tail average at iteration
    ``k``). Nonlinear presets always use the difference gradient.
    """
    t0 = time.perf_counter()
    problem = build_problem(cfg)
    kind = cfg["sgd"]["gradient"] if kind is None else kind
    n = int(cfg["sgd"]["n"] if n is None else n)
    S = int(cfg["study"]["seeds"] if seeds is None else seeds)
    seed = int(cfg["seed"] if seed is None else seed)
    config = problem.sgd_config(**sgd_changes)
    nonlinear = isinstance(problem.model, NonlinearTikhonov)
    if nonlinear:
        kind = "approx"
    variant = cfg["sgd"]["variant"]

    if nonlinear:
        def one(r):
            data = problem.sample(n, _rng(seed, "online", r))
            return run_bsgd(problem.model, data.U, data.Y, config, kind=kind, variant=variant)
        traces = _map(one, range(S), threads)
    else:
        traces = []
        chunk = max(1, int(2e7 // max(1, n * problem.model.dim)))
        for start in range(0, S, chunk):
            block = [problem.sample(n, _rng(seed, "online", r)) for r in range(start, min(S, start + chunk))]
            U = np.stack([b.U for b in block])
            Y = np.stack([b.Y for b in block])
            traces += run_bsgd_many(problem.model, U, Y, config, kind=kind, variant=variant)
    ls = problem.lambda_star
    err = _tail_errors(traces, ls)
    cols = ["run", "bar_lambda", "sq_error", "skipped", "flagged"] + [f"sq_error_{k}" for k in checkpoints]
    rows = []
    for r, tr in enumerate(traces):
        row = {"run": r, "bar_lambda": tr.bar_lambda, "sq_error": err[r], "skipped": tr.skipped, "flagged": tr.flagged}
        for k in checkpoints:
            row[f"sq_error_{k}"] = (tr.tail_average(k) - ls) ** 2
        rows.append(row)
    q1, q3 = np.percentile(err, [25, 75])
    summary = {
        "gradient": kind,
        "n": n,
        "median_sq_error": float(np.median(err)),
        "iqr_sq_error": float(q3 - q1),
        "lambda0": config.lambda0,
        "h_decay": config.h_decay,
    }
    for k in checkpoints:
        summary[f"median_sq_error_{k}"] = float(np.median(_tail_errors(traces, ls, k)))
    return StudyResult("online", cols, rows, summary, cfg, seed, time.perf_counter() - t0, traces)


def denoise_study(cfg: dict, seeds: int | None = None, seed: int | None = None, n: int | None = None,
                  threads: int = 1) -> StudyResult:
    """Learned versus fixed and per-instance optimal weights for denoising.

    Each instance learns ``lam_bar`` by SGD on fresh training paths and is
    scored on an independent test path. Rows: ``instance, bar_lambda,
    mse_learned, mse_fixed_<lam>..., lambda_grid, mse_grid, beats_fixed,
    ratio_to_grid``.
    """
    t0 = time.perf_counter()
    if cfg["kind"] != "signal":
        raise ValueError("the denoising study needs a signal preset")
    problem = build_problem(cfg)
    S = int(cfg["study"]["seeds"] if seeds is None else seeds)
    n = int(cfg["sgd"]["n"] if n is None else n)
    seed = int(cfg["seed"] if seed is None else seed)
    st = cfg["study"]
    fixed = list(st["fixed_lambdas"])
    grid = np.geomspace(st["grid_lower"], st["grid_upper"], int(st["grid_points"]))
    config = problem.sgd_config()
    model = problem.model
    traces = []
    chunk = 10
    for start in range(0, S, chunk):
        block = [problem.sample(n, _rng(seed, "denoise", r)) for r in range(start, min(S, start + chunk))]
        traces += run_bsgd_many(model, np.stack([b.U for b in block]), np.stack([b.Y for b in block]), config,
                                kind=cfg["sgd"]["gradient"], variant=cfg["sgd"]["variant"])
    rows = []
    for r in range(S):
        test = problem.sample(1, _rng(seed, "denoise-test", r))
        u, y = test.U[0], test.Y[0]

        def mse(lam):
            return float(np.mean((model.solve(y, lam, method="spectral") - u) ** 2))

        curve = np.mean((model.solve(np.broadcast_to(y, (grid.size, y.size)), grid, method="spectral") - u) ** 2, axis=1)
        j = int(np.argmin(curve))
        lam_bar = traces[r].bar_lambda
        row = {"instance": r, "bar_lambda": lam_bar, "mse_learned": mse(lam_bar)}
        for lam in fixed:
            row[f"mse_fixed_{lam:g}"] = mse(lam)
        row["lambda_grid"] = float(grid[j])
        row["mse_grid"] = float(curve[j])
        row["beats_fixed"] = bool(all(row["mse_learned"] < row[f"mse_fixed_{lam:g}"] for lam in fixed))
        row["ratio_to_grid"] = row["mse_learned"] / row["mse_grid"]
        rows.append(row)
    cols = ["instance", "bar_lambda", "mse_learned"] + [f"mse_fixed_{lam:g}" for lam in fixed] + [
        "lambda_grid", "mse_grid", "beats_fixed", "ratio_to_grid"]
    beats = np.mean([r["beats_fixed"] for r in rows])
    within = np.mean([r["ratio_to_grid"] <= 1.15 for r in rows])
    summary = {
        "fraction_beats_fixed": float(beats),
        "fraction_within_1.15": float(within),
        "median_bar_lambda": float(np.median([r["bar_lambda"] for r in rows])),
        "mean_mse": {c: float(np.mean([r[c] for r in rows])) for c in cols if c.startswith("mse_")},
    }
    return StudyResult("denoise", cols, rows, summary, cfg, seed, time.perf_counter() - t0, traces)


def check_reproducible(study, cfg: dict, **kwargs) -> tuple:
    """Run ``study(cfg, **kwargs)`` twice; return ``(identical, csv)``."""
    first = study(cfg, **kwargs).to_csv()
    second = study(cfg, **kwargs).to_csv()
    return first == second, first
