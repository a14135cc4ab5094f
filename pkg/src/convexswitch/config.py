"""Experiment configuration: presets, validation and object construction.

A configuration is a JSON object with the sections ``model``, ``economics``,
``grid``, ``sampling``, ``solver``, ``diagnostics`` and ``output``. A
top-level ``"preset"`` names a built-in starting point that the remaining
keys override section by section.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import fields

from .disturbances import GarchLike, GeometricBrownian, LogAR1, PriceModel, simulate_paths
from .grids import equidistant_grid, load_grid_csv, state_cloud, stochastic_grid
from .model import EconomicParams, ResourceModel
from .pwlc import Grid


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configurations."""


SECTIONS = ("model", "economics", "grid", "sampling", "solver", "diagnostics", "output")

MODEL_KEYS = {
    "gbm": {"type", "mu", "sigma2", "dt"},
    "ar1": {"type", "mu", "sigma2", "dt", "phi"},
    "garch": {"type", "kappa", "phi", "beta1", "beta2", "sigma2", "dt", "sigma0_sq", "y0_sq"},
}
ECON_KEYS = {f.name for f in fields(EconomicParams)}
GRID_KEYS = {
    "line": {"kind", "lo", "hi", "m"},
    "stochastic": {"kind", "points", "paths", "start_price", "seed"},
    "file": {"kind", "path"},
}
SAMPLING_KEYS = {"n"}
SOLVER_KEYS = {"fast", "neighbors"}
DIAG_KEYS = {"K", "I", "z0", "modes", "reserve", "seed", "scheme"}
OUTPUT_KEYS = {"dir", "policy_t", "policy_mode", "policy_prices", "paths", "path_z0", "path_steps"}

_BASE = {
    "model": {"type": "gbm", "mu": 0.09, "sigma2": 0.08, "dt": 0.25},
    "economics": {},
    "grid": {"kind": "line", "lo": 0.0, "hi": 20.0, "m": 4001},
    "sampling": {"n": 20000},
    "solver": {"fast": False, "neighbors": 1},
    "diagnostics": {"K": 1000, "I": 1000, "z0": [0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
                    "modes": [2, 1], "reserve": None, "seed": 0, "scheme": "stratified"},
    "output": {"dir": "out", "policy_t": 0, "policy_mode": 2, "policy_prices": [0.05, 3.0, 296],
               "paths": 10, "path_z0": 0.4, "path_steps": None},
}

_AR1 = {
    "model": {"type": "ar1", "mu": 0.09, "sigma2": 0.08, "dt": 0.25, "phi": 1.0},
    "grid": {"kind": "line", "lo": -5.0, "hi": 5.0, "m": 2000},
    "sampling": {"n": 10000},
    "diagnostics": {"K": 500, "I": 500, "z0": [0.3, 0.4, 0.5]},
}

PRESETS = {
    "gbm-bs": {},
    "gbm-desk": {
        "grid": {"kind": "line", "lo": 0.0, "hi": 10.0, "m": 1001},
        "sampling": {"n": 500},
        "diagnostics": {"K": 200, "I": 200},
    },
    "ar1": _AR1,
    "wastage": {**_AR1, "economics": {"wastage": 0.5}},
    "delivery": {**_AR1, "economics": {"penalty": 1.0}},
    "garch": {
        "model": {"type": "garch", "kappa": 0.05, "phi": 0.6, "beta1": 0.8, "beta2": 0.1,
                  "sigma2": math.sqrt(0.08), "dt": 0.25, "sigma0_sq": math.sqrt(0.08), "y0_sq": 1.0},
        "grid": {"kind": "stochastic", "points": 2000, "paths": 1000, "start_price": 0.4, "seed": 0},
        "sampling": {"n": 10000},
        "solver": {"fast": True, "neighbors": 1},
        "diagnostics": {"K": 500, "I": 500, "z0": [0.3, 0.4, 0.5]},
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict) and key in SECTIONS:
            # a new model type or grid kind replaces the section instead of mixing keys
            tag = {"model": "type", "grid": "kind"}.get(key)
            if tag and tag in val and val[tag] != out[key].get(tag):
                out[key] = copy.deepcopy(val)
            else:
                out[key].update(copy.deepcopy(val))
        else:
            out[key] = copy.deepcopy(val)
    return out


def resolve(raw: dict | None = None, preset: str | None = None) -> dict:
    """Fully resolved configuration: base defaults, then the preset, then ``raw``."""
    raw = copy.deepcopy(raw or {})
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    name = raw.pop("preset", None) or preset or "gbm-bs"
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}")
    unknown = sorted(set(raw) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown top-level keys: {', '.join(unknown)}")
    for sec, val in raw.items():
        if not isinstance(val, dict):
            raise ConfigError(f"section {sec!r} must be an object")
    cfg = _merge(_merge(_BASE, PRESETS[name]), raw)
    cfg["preset"] = name
    validate(cfg)
    return cfg


def _check_keys(section: str, given: dict, allowed: set) -> None:
    bad = sorted(set(given) - allowed)
    if bad:
        raise ConfigError(f"unknown keys in {section}: {', '.join(bad)}")


def _positive_int(section: str, key: str, val, minimum: int = 1) -> None:
    if isinstance(val, bool) or not isinstance(val, int) or val < minimum:
        raise ConfigError(f"{section}.{key} must be an integer >= {minimum}, got {val!r}")


def validate(cfg: dict) -> None:
    """Check every section; raise :class:`ConfigError` naming the offending keys."""
    mtype = cfg["model"].get("type")
    if mtype not in MODEL_KEYS:
        raise ConfigError(f"model.type must be one of {', '.join(MODEL_KEYS)}, got {mtype!r}")
    _check_keys("model", cfg["model"], MODEL_KEYS[mtype])
    _check_keys("economics", cfg["economics"], ECON_KEYS)
    kind = cfg["grid"].get("kind")
    if kind not in GRID_KEYS:
        raise ConfigError(f"grid.kind must be one of {', '.join(GRID_KEYS)}, got {kind!r}")
    _check_keys("grid", cfg["grid"], GRID_KEYS[kind])
    _check_keys("sampling", cfg["sampling"], SAMPLING_KEYS)
    _check_keys("solver", cfg["solver"], SOLVER_KEYS)
    _check_keys("diagnostics", cfg["diagnostics"], DIAG_KEYS)
    _check_keys("output", cfg["output"], OUTPUT_KEYS)

    g = cfg["grid"]
    if kind == "line":
        for key in ("lo", "hi", "m"):
            if key not in g:
                raise ConfigError(f"grid.{key} is required for a line grid")
        _positive_int("grid", "m", g["m"], 2)
        if not g["lo"] < g["hi"]:
            raise ConfigError(f"infeasible grid: need lo < hi, got lo={g['lo']}, hi={g['hi']}")
        if mtype == "garch":
            raise ConfigError("the garch model needs a stochastic or file grid")
    elif kind == "stochastic":
        _positive_int("grid", "points", g.get("points"), 2)
        _positive_int("grid", "paths", g.get("paths"))
        if not g.get("start_price", 0) > 0:
            raise ConfigError("grid.start_price must be positive")
    elif "path" not in g:
        raise ConfigError("grid.path is required for a file grid")
    _positive_int("sampling", "n", cfg["sampling"].get("n"))
    _positive_int("solver", "neighbors", cfg["solver"].get("neighbors"))
    d = cfg["diagnostics"]
    _positive_int("diagnostics", "K", d.get("K"))
    _positive_int("diagnostics", "I", d.get("I"))
    if d.get("scheme") not in ("stratified", "iid"):
        raise ConfigError("diagnostics.scheme must be 'stratified' or 'iid'")
    z0 = d.get("z0")
    if not isinstance(z0, list) or not z0 or any(not isinstance(z, (int, float)) or z <= 0 for z in z0):
        raise ConfigError("diagnostics.z0 must be a non-empty list of positive prices")
    if not isinstance(d.get("modes"), list) or any(m not in (1, 2) for m in d["modes"]):
        raise ConfigError("diagnostics.modes must list modes 1 (closed) and/or 2 (opened)")
    o = cfg["output"]
    pr = o.get("policy_prices")
    if not (isinstance(pr, list) and len(pr) == 3 and 0 < pr[0] < pr[1] and isinstance(pr[2], int) and pr[2] >= 2):
        raise ConfigError("output.policy_prices must be [lo, hi, count] with 0 < lo < hi and count >= 2")
    if o.get("policy_mode") not in (1, 2):
        raise ConfigError("output.policy_mode must be 1 or 2")
    _positive_int("output", "paths", o.get("paths"))
    try:
        build_model(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model or economics: {exc}") from exc


def build_price(cfg: dict) -> PriceModel:
    m = dict(cfg["model"])
    cls = {"gbm": GeometricBrownian, "ar1": LogAR1, "garch": GarchLike}[m.pop("type")]
    return cls(**m)


def build_model(cfg: dict) -> ResourceModel:
    econ = dict(cfg["economics"])
    if econ.get("delivery_schedule") is not None:
        econ["delivery_schedule"] = {int(k): v for k, v in econ["delivery_schedule"].items()}
    return ResourceModel(build_price(cfg), EconomicParams(**econ))


def build_grid(cfg: dict, model: ResourceModel, seed: int | None = None) -> Grid:
    g = cfg["grid"]
    if g["kind"] == "line":
        return equidistant_grid(g["lo"], g["hi"], g["m"])
    if g["kind"] == "file":
        grid = load_grid_csv(g["path"])
        if grid.dim != model.dim:
            raise ConfigError(f"grid file has dimension {grid.dim}, model needs {model.dim}")
        return grid
    s = g.get("seed", 0) if seed is None else seed
    z0 = model.price.initial_state(g["start_price"])
    paths = simulate_paths(model.price, z0, model.T, g["paths"], seed=s)
    return stochastic_grid(state_cloud(paths.states), g["points"], seed=s)


def solution_key(cfg: dict) -> str:
    """Hash of everything that determines the solved value functions."""
    part = {k: cfg[k] for k in ("model", "economics", "grid", "sampling", "solver")}
    return config_hash(part)


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
