"""Batch command-line frontend.

Every subcommand resolves a preset, runs one piece of the harness and
writes ``<name>.csv`` plus ``manifest.json`` into the output directory.
Exit codes: 0 success, 2 invalid input, 3 numerical failure. Failures
write a manifest with ``"status": "failed"`` and print one line

    bilevel-tikhonov: error=<validation|numerical> module=<name> message=<json string>

to stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .bilevel import SgdFailure, offline_estimate
from .experiments import (
    StudyFailure,
    StudyResult,
    _rng,
    build_problem,
    consistency_study,
    denoise_study,
    dimension_study,
    generate_dataset,
    online_study,
)
from .lower import LowerSolveError
from .presets import PresetError, load_preset, preset_hash

PROG = "bilevel-tikhonov"
ENV_OUT = "BILEVEL_TIKHONOV_OUT"
ENV_THREADS = "BILEVEL_TIKHONOV_THREADS"

SUBCOMMANDS = {
    "validate": "resolve a preset and print it as JSON",
    "dataset": "draw sgd.n training pairs and write them as CSV",
    "offline": "offline estimate of lambda from sgd.n pairs",
    "sgd": "one bilevel SGD run; writes the iterate trace",
    "study": "the preset's Monte Carlo study (consistency, dimension, online or denoise)",
    "denoise": "learned versus fixed weights on the signal denoising problem",
}

EPILOG = f"""\
flags accepted by every subcommand:
  --preset NAME|PATH  shipped preset name or JSON file (required)
  --set KEY=VALUE     override a preset key, e.g. sgd.beta0=0.01 (repeatable)
  --out DIR           output directory (default ${ENV_OUT} or ./out)
  --seed N            master seed (default: the preset's)
  --threads N         worker threads (default ${ENV_THREADS} or all cores)
  --full              apply the preset's full-scale block

exit codes: 0 success, 2 invalid input, 3 numerical failure
"""


class ValidationError(Exception):
    """Input rejected before any computation."""


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--preset", required=True, metavar="NAME|PATH", help="shipped preset name or JSON file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a preset key (repeatable)")
    p.add_argument("--out", metavar="DIR", help=f"output directory (default ${ENV_OUT} or ./out)")
    p.add_argument("--seed", type=int, metavar="N", help="master seed (default: the preset's)")
    p.add_argument("--threads", type=int, metavar="N", help=f"worker threads (default ${ENV_THREADS} or all cores)")
    p.add_argument("--full", action="store_true", help="apply the preset's full-scale block")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="Learn Tikhonov regularization weights by bilevel optimization.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    common = _common()
    for name, text in SUBCOMMANDS.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def _threads(arg) -> int:
    if arg is None:
        env = os.environ.get(ENV_THREADS)
        if env:
            try:
                arg = int(env)
            except ValueError:
                raise ValidationError(f"{ENV_THREADS}={env!r} is not an integer") from None
        else:
            arg = os.cpu_count() or 1
    if arg < 1:
        raise ValidationError("--threads must be at least 1")
    return arg


def _out_dir(arg) -> Path:
    return Path(arg or os.environ.get(ENV_OUT) or "out")


def _failing_module(exc: BaseException) -> str:
    """Innermost package module in the traceback."""
    pkg = Path(__file__).parent
    name = "cli"
    for frame in traceback.extract_tb(exc.__traceback__):
        path = Path(frame.filename)
        if path.parent == pkg:
            name = path.stem
    return name


def _study_kind(cfg: dict) -> str:
    kind = cfg["kind"]
    if kind == "laplace" and cfg["mesh"]["dimension"] == 1:
        return "dimension"
    if kind in ("matrix", "laplace"):
        return "consistency"
    if kind == "signal":
        return "denoise"
    return "online"


def _table(name, cfg, seed, columns, rows, summary, t0) -> StudyResult:
    return StudyResult(name, columns, rows, summary, cfg, seed, time.perf_counter() - t0)


def _run_dataset(cfg, seed, threads):
    t0 = time.perf_counter()
    n = cfg["sgd"]["n"]
    data = generate_dataset(cfg, n, _rng(seed, "dataset", 0))
    du, dy = data.U.shape[1], data.Y.shape[1]
    cols = ["pair"] + [f"u_{i}" for i in range(du)] + [f"y_{i}" for i in range(dy)]
    rows = []
    for j in range(n):
        row = {"pair": j}
        row.update({f"u_{i}": float(v) for i, v in enumerate(data.U[j])})
        row.update({f"y_{i}": float(v) for i, v in enumerate(data.Y[j])})
        rows.append(row)
    return _table("dataset", cfg, seed, cols, rows, {"n": n, "unknowns": du, "observations": dy}, t0)


def _run_offline(cfg, seed, threads):
    t0 = time.perf_counter()
    problem = build_problem(cfg)
    n = cfg["sgd"]["n"]
    data = problem.sample(n, _rng(seed, "dataset", 0))
    res = offline_estimate(problem.model, data.U, data.Y, problem.interval)
    row = {"n": n, "lambda_hat": res.lam, "loss": res.loss, "at_boundary": res.at_boundary,
           "evaluations": res.evaluations, "lambda_star": problem.lambda_star}
    return _table("offline", cfg, seed, list(row), [row], dict(row), t0)


def _run_sgd(cfg, seed, threads):
    t0 = time.perf_counter()
    res = online_study(cfg, seeds=1, seed=seed, threads=1)
    tr = res.traces[0]
    cols = ["iteration", "lambda", "gradient", "step", "data_index"]
    rows = [{"iteration": 0, "lambda": float(tr.iterates[0]), "gradient": "", "step": "", "data_index": ""}]
    for k in range(tr.n):
        rows.append({"iteration": k + 1, "lambda": float(tr.iterates[k + 1]), "gradient": float(tr.gradients[k]),
                     "step": float(tr.steps[k]), "data_index": int(tr.indices[k])})
    summary = dict(tr.summary(), gradient=res.summary["gradient"], sq_error=res.rows[0]["sq_error"])
    return _table("sgd", cfg, seed, cols, rows, summary, t0)


def _run_study(cfg, seed, threads):
    kind = _study_kind(cfg)
    if kind == "dimension":
        return dimension_study(cfg, seed=seed, threads=threads)
    if kind == "consistency":
        return consistency_study(cfg, seed=seed, threads=threads)
    if kind == "denoise":
        return denoise_study(cfg, seed=seed, threads=threads)
    return online_study(cfg, seed=seed, threads=threads)


def _run_denoise(cfg, seed, threads):
    return denoise_study(cfg, seed=seed, threads=threads)


RUNNERS = {
    "dataset": _run_dataset,
    "offline": _run_offline,
    "sgd": _run_sgd,
    "study": _run_study,
    "denoise": _run_denoise,
}


def _check(command: str, cfg: dict) -> None:
    """Reject combinations that cannot run, before any computation."""
    if command == "denoise" and cfg["kind"] != "signal":
        raise ValidationError("denoise needs a preset of kind 'signal'")
    if command == "offline" and cfg["kind"] not in ("matrix", "laplace", "signal"):
        raise ValidationError(f"offline estimation needs a closed-form lower level, not kind {cfg['kind']!r}")
    try:
        problem = build_problem(cfg)
        problem.sgd_config()
    except (PresetError, ValueError, TypeError) as exc:
        raise ValidationError(str(exc)) from exc


def _fail(out: Path | None, command, cfg, category, exc) -> None:
    module = _failing_module(exc)
    message = " ".join(str(exc).split()) or type(exc).__name__
    print(f"{PROG}: error={category} module={module} message={json.dumps(message)}", file=sys.stderr)
    if out is None:
        return
    try:
        out.mkdir(parents=True, exist_ok=True)
        manifest = {
            "status": "failed",
            "command": command,
            "error": category,
            "module": module,
            "exception": type(exc).__name__,
            "message": message,
            "package_version": __version__,
            "preset": cfg,
            "preset_hash": preset_hash(cfg) if cfg else None,
            "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as err:
        print(f"{PROG}: error=io module=cli message={json.dumps(str(err))}", file=sys.stderr)


NUMERICAL = (LowerSolveError, SgdFailure, StudyFailure, ArithmeticError, np.linalg.LinAlgError, RuntimeError,
             ValueError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    command = args.command
    out = None if command == "validate" else _out_dir(args.out)
    cfg = None
    try:
        threads = _threads(args.threads)
        cfg = load_preset(args.preset, full=args.full, overrides=args.overrides)
        if args.seed is not None:
            cfg["seed"] = args.seed
        _check(command, cfg)
    except (PresetError, ValidationError) as exc:
        _fail(out, command, cfg, "validation", exc)
        return 2
    if command == "validate":
        print(json.dumps(cfg, indent=2, sort_keys=True))
        return 0
    try:
        result = RUNNERS[command](cfg, cfg["seed"], threads)
    except NUMERICAL as exc:
        _fail(out, command, cfg, "numerical", exc)
        return 3
    path = result.write(out)
    print(f"wrote {path} ({len(result.rows)} rows)")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
