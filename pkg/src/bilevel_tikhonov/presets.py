"""Experiment presets: JSON files that fully determine a study.

A preset has top-level ``name``, ``kind`` and ``seed`` plus the sections
``mesh``, ``prior``, ``forward``, ``sgd`` and ``study``. Missing keys take the
defaults below; unknown keys are rejected. An optional ``full`` block holds
overrides that restore full-scale parameters and is applied by
``resolve(..., full=True)``.
"""
from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources
from pathlib import Path

__all__ = [
    "PresetError",
    "DEFAULTS",
    "KINDS",
    "shipped_presets",
    "load_preset",
    "resolve",
    "apply_overrides",
    "preset_hash",
]

KINDS = ("matrix", "laplace", "darcy", "eikonal", "signal")

DEFAULTS: dict = {
    "name": "",
    "kind": "matrix",
    "seed": 0,
    "mesh": {"dimension": 2, "nodes": 34, "boundary": "dirichlet"},
    "prior": {
        "beta": 1.0,
        "tau": 0.0,
        "alpha": 2.0,
        "lambda_star": 1.0,
        "truncation": None,
        "coefficient_law": "gaussian",
        "boundary": "dirichlet",
    },
    "forward": {
        "gamma": 1.0,
        "observations": 1,
        "observation_seed": 0,
        "matrix": "identity",
        "size": 1,
        "source": 1.0,
        "source_node": "center",
        "rate": 10.0,
        "horizon": 1.0,
        "grid": 1000,
        "right_boundary": "free",
    },
    "sgd": {
        "beta0": 1.0,
        "exponent": 1.0,
        "cap": False,
        "h0": 0.01,
        "h_decay": "fixed",
        "lambda_l": 1e-4,
        "lambda_u": 10.0,
        "lambda0": 1.0,
        "m": 50,
        "n": 1000,
        "gradient": "exact",
        "variant": "split",
    },
    "study": {
        "n_list": [10, 32, 100, 316, 1000],
        "repetitions": 200,
        "mesh_nodes": [33, 65, 129, 257],
        "seeds": 50,
        "fixed_lambdas": [1e-2, 1e-5],
        "grid_points": 200,
        "grid_lower": 1e-7,
        "grid_upper": 1e-1,
        "max_flag_fraction": 0.1,
    },
}

SECTIONS = ("mesh", "prior", "forward", "sgd", "study")


class PresetError(ValueError):
    """Invalid preset or override."""


def _check_keys(data: dict, schema: dict, where: str) -> None:
    for key, value in data.items():
        if key not in schema:
            raise PresetError(f"unknown key '{where}{key}'")
        if isinstance(schema[key], dict):
            if not isinstance(value, dict):
                raise PresetError(f"{where}{key} must be an object")
            _check_keys(value, schema[key], f"{where}{key}.")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _validate(cfg: dict) -> None:
    if cfg["kind"] not in KINDS:
        raise PresetError(f"kind must be one of {KINDS}, got {cfg['kind']!r}")
    sgd = cfg["sgd"]
    lo, hi, l0 = sgd["lambda_l"], sgd["lambda_u"], sgd["lambda0"]
    if not 0 < lo < hi:
        raise PresetError(f"sgd interval [{lo}, {hi}] must satisfy 0 < lambda_l < lambda_u")
    if not lo <= l0 <= hi:
        raise PresetError(f"sgd.lambda0={l0} outside the interval [{lo}, {hi}]")
    if not 0.5 < sgd["exponent"] <= 1.0:
        raise PresetError("sgd.exponent must lie in (1/2, 1]")
    if sgd["beta0"] <= 0 or sgd["h0"] <= 0:
        raise PresetError("sgd.beta0 and sgd.h0 must be positive")
    if sgd["m"] < 1 or sgd["m"] > sgd["n"]:
        raise PresetError("sgd.m must satisfy 1 <= m <= n")
    if sgd["gradient"] not in ("exact", "approx"):
        raise PresetError("sgd.gradient must be 'exact' or 'approx'")
    if sgd["h_decay"] not in ("fixed", "beta"):
        raise PresetError("sgd.h_decay must be 'fixed' or 'beta'")
    prior = cfg["prior"]
    if prior["beta"] <= 0 or prior["lambda_star"] <= 0 or prior["alpha"] <= 0 or prior["tau"] < 0:
        raise PresetError("prior needs beta > 0, alpha > 0, tau >= 0, lambda_star > 0")
    if cfg["forward"]["gamma"] < 0:
        raise PresetError("forward.gamma must be nonnegative")
    ns = cfg["study"]["n_list"]
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise PresetError("study.n_list must be increasing")
    if cfg["study"]["repetitions"] < 1 or cfg["study"]["seeds"] < 1:
        raise PresetError("study.repetitions and study.seeds must be >= 1")


def resolve(data: dict, full: bool = False, overrides=()) -> dict:
    """Merge a raw preset with defaults, the optional ``full`` block and overrides."""
    data = copy.deepcopy(data)
    full_block = data.pop("full", {}) or {}
    _check_keys(data, DEFAULTS, "")
    _check_keys(full_block, DEFAULTS, "full.")
    cfg = _merge(DEFAULTS, data)
    if full:
        cfg = _merge(cfg, full_block)
    cfg = apply_overrides(cfg, overrides)
    _validate(cfg)
    return cfg


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings; values are parsed as JSON when possible."""
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        if "=" not in item:
            raise PresetError(f"override {item!r} is not of the form key=value")
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        node, schema = cfg, DEFAULTS
        for p in parts[:-1]:
            if p not in schema or not isinstance(schema[p], dict):
                raise PresetError(f"unknown key {key!r}")
            node, schema = node[p], schema[p]
        if parts[-1] not in schema or isinstance(schema[parts[-1]], dict):
            raise PresetError(f"unknown key {key!r}")
        node[parts[-1]] = _parse_value(text)
    return cfg


def shipped_presets() -> list[str]:
    root = resources.files(__package__) / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_preset(name_or_path, full: bool = False, overrides=()) -> dict:
    """Load a shipped preset by name or a JSON file by path and resolve it."""
    path = Path(str(name_or_path))
    if path.suffix == ".json" or path.exists():
        try:
            text = path.read_text()
        except OSError as exc:
            raise PresetError(f"cannot read preset {path}: {exc}") from exc
    else:
        res = resources.files(__package__) / "presets" / f"{name_or_path}.json"
        if not res.is_file():
            raise PresetError(f"no shipped preset named {name_or_path!r}; have {shipped_presets()}")
        text = res.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PresetError(f"preset is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise PresetError("preset must be a JSON object")
    return resolve(data, full=full, overrides=overrides)


def preset_hash(cfg: dict) -> str:
    """Content hash of a resolved preset."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
