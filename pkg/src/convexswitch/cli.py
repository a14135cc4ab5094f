"""Command line experiment runner.

    convexswitch solve --config cfg.json --out run/
    convexswitch bounds --config cfg.json --out run/
    convexswitch repro-table 2 --fast --out tables/

Exit codes: 0 success, 1 configuration error, 2 runtime error. Outputs are
staged and only moved into ``--out`` once the whole command has succeeded.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import platform
import shutil
import sys
import tempfile
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ConfigError
from .disturbances import save_paths_csv, simulate_paths
from .duality import bounds_row, pathwise_values, write_bounds_csv
from .grids import save_grid_csv
from .solver import Solution, backward_induction, policy_boundaries

log = logging.getLogger("convexswitch")

SOLUTION_DIR = "solution"


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("artifact", "numpy", "scipy", "scikit-learn", "numba", "threadpoolctl"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


class Run:
    """Bookkeeping of one command: staged outputs, timings and the manifest."""

    def __init__(self, command: str, cfg: dict, args):
        self.command = command
        self.cfg = cfg
        self.threads = max(1, args.threads)
        self.out = Path(cfg["output"]["dir"])
        self.stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.out.parent if self.out.parent.exists() else None))
        self.timings: dict[str, float] = {}

    def path(self, name: str) -> Path:
        return self.stage / name

    def timed(self, label: str, fn, *a, **kw):
        t0 = time.perf_counter()
        res = fn(*a, **kw)
        self.timings[label] = round(time.perf_counter() - t0, 3)
        return res

    def commit(self) -> None:
        manifest = {
            "command": self.command,
            "config": self.cfg,
            "config_hash": cfgmod.config_hash(self.cfg),
            "solution_key": cfgmod.solution_key(self.cfg),
            "threads": self.threads,
            "versions": _versions(),
            "timings": self.timings,
        }
        (self.stage / f"manifest-{self.command}.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        self.out.mkdir(parents=True, exist_ok=True)
        for item in self.stage.iterdir():
            target = self.out / item.name
            if target.is_dir():
                shutil.rmtree(target)
            elif target.exists():
                target.unlink()
            shutil.move(str(item), str(target))
        shutil.rmtree(self.stage, ignore_errors=True)

    def abort(self) -> None:
        shutil.rmtree(self.stage, ignore_errors=True)


# -- stages -------------------------------------------------------------------------------


def _solve(run: Run):
    cfg = run.cfg
    model = cfgmod.build_model(cfg)
    grid = run.timed("grid", cfgmod.build_grid, cfg, model)
    sampling = model.price.sampling(cfg["sampling"]["n"])
    sol = run.timed("solve", backward_induction, model, grid, sampling, fast=cfg["solver"]["fast"],
                    neighbors=cfg["solver"]["neighbors"], threads=run.threads)
    return model, sol


def _load_or_solve(run: Run):
    """Reuse a value dump in ``--out`` when it was produced by the same configuration."""
    cfg = run.cfg
    stored = run.out / SOLUTION_DIR
    info = stored / "solution.json"
    if info.exists():
        meta = json.loads(info.read_text())
        if meta.get("solution_key") != cfgmod.solution_key(cfg):
            raise ConfigError(f"value dump in {stored} was produced by a different configuration")
        model = cfgmod.build_model(cfg)
        return model, Solution.load(stored, model, mmap=True)
    return _solve(run)


def _model_id(cfg: dict) -> str:
    m, e = cfg["model"], cfg["economics"]
    parts = [cfg.get("preset", m["type"])]
    if "phi" in m:
        parts.append(f"phi{m['phi']:g}")
    if e.get("wastage"):
        parts.append(f"w{e['wastage']:g}")
    if e.get("penalty"):
        parts.append(f"b{e['penalty']:g}")
    return "-".join(parts)


def _bound_rows(run: Run, model, sol) -> list[list[str]]:
    d = run.cfg["diagnostics"]
    reserve = model.R if d.get("reserve") is None else d["reserve"]
    rows = []
    for z0 in d["z0"]:
        pv = run.timed(f"bounds z0={z0:g}", pathwise_values, sol, model.price.initial_state(z0), d["K"], d["I"],
                       seed=d["seed"], threads=run.threads, scheme=d["scheme"])
        for mode in d["modes"]:
            est = pv.estimate(model.index(reserve, mode))
            rows.append(bounds_row(_model_id(run.cfg), z0, mode, est))
    return rows


# -- commands -----------------------------------------------------------------------------


def cmd_solve(run: Run) -> None:
    model, sol = _solve(run)
    sol.save(run.path(SOLUTION_DIR), {"solution_key": cfgmod.solution_key(run.cfg)})
    # a small readable summary next to the binary dump
    d = run.cfg["diagnostics"]
    reserve = model.R if d.get("reserve") is None else d["reserve"]
    with open(run.path("values.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "z0", "mode", "value"])
        for z0 in d["z0"]:
            vals = sol.evaluate(sol.values[0], model.price.initial_state(z0)[None])[:, 0]
            for mode in d["modes"]:
                w.writerow([_model_id(run.cfg), f"{z0:g}", mode, f"{vals[model.index(reserve, mode)]:.6g}"])


def cmd_bounds(run: Run) -> None:
    model, sol = _load_or_solve(run)
    write_bounds_csv(run.path("bounds.csv"), _bound_rows(run, model, sol))


def cmd_policy(run: Run) -> None:
    model, sol = _load_or_solve(run)
    o = run.cfg["output"]
    lo, hi, count = o["policy_prices"]
    prices = np.linspace(lo, hi, count)
    found = run.timed("policy", policy_boundaries, o["policy_t"], o["policy_mode"], sol, prices)
    with open(run.path("policy.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "reserve", "mode", "price", "action_below", "action_above"])
        for reserve in sorted(found):
            for th in found[reserve]:
                w.writerow([o["policy_t"], th.reserve, th.mode, f"{th.price:.6g}", th.below, th.above])


def cmd_paths(run: Run) -> None:
    cfg = run.cfg
    model = cfgmod.build_model(cfg)
    o = cfg["output"]
    T = model.T if o.get("path_steps") is None else o["path_steps"]
    paths = run.timed("paths", simulate_paths, model.price, model.price.initial_state(o["path_z0"]), T,
                      o["paths"], seed=cfg["diagnostics"]["seed"])
    save_paths_csv(paths, run.path("paths.csv"), model.price)


def cmd_grid(run: Run) -> None:
    model = cfgmod.build_model(run.cfg)
    grid = cfgmod.build_grid(run.cfg, model)
    save_grid_csv(grid, run.path("grid.csv"))


# variants per table: (preset, overrides, model id)
TABLES = {
    1: [("gbm-bs", {}, "gbm")],
    2: [("ar1", {"model": {"phi": phi}}, f"ar1-phi{phi:g}") for phi in (1.0, 0.8, 0.6)],
    3: [("ar1", {"model": {"phi": phi}, "economics": {"wastage": w}}, f"ar1-phi{phi:g}-w{w:g}")
        for phi in (1.0, 0.6) for w in (0.0, 0.5)],
    4: [("ar1", {"model": {"phi": phi}, "economics": {"penalty": b}}, f"ar1-phi{phi:g}-b{b:g}")
        for phi in (1.0, 0.6) for b in (0.0, 1.0)],
    5: [("garch", {"model": {"phi": phi}}, f"garch-phi{phi:g}") for phi in (1.0, 0.8, 0.6)],
}


def cmd_repro(run: Run, table: int, base_raw: dict) -> None:
    rows = []
    for preset, over, ident in TABLES[table]:
        raw = copy.deepcopy(base_raw)
        raw.pop("preset", None)
        for sec, vals in over.items():
            raw.setdefault(sec, {}).update(vals)
        cfg = cfgmod.resolve(raw, preset)
        cfg["output"]["dir"] = run.cfg["output"]["dir"]
        sub = copy.copy(run)
        sub.cfg = cfg
        log.info("table %d: %s", table, ident)
        model, sol = _solve(sub)
        for row in _bound_rows(sub, model, sol):
            row[0] = ident
            rows.append(row)
    write_bounds_csv(run.path(f"table{table}.csv"), rows)


COMMANDS = {"solve": cmd_solve, "bounds": cmd_bounds, "policy": cmd_policy, "paths": cmd_paths, "grid": cmd_grid}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file (or a manifest to re-run)")
    common.add_argument("--preset", help="built-in configuration: " + ", ".join(sorted(cfgmod.PRESETS)))
    common.add_argument("--seed", type=int, help="diagnostics/simulation seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    common.add_argument("--fast", action="store_true", help="nearest-neighbour continuation values")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="convexswitch", description="Convex switching solver and bound diagnostics")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("solve", "solve and dump value functions"),
                           ("bounds", "primal and dual bound estimates"),
                           ("policy", "policy switching boundaries"),
                           ("paths", "simulated price paths"),
                           ("grid", "build and save the grid")):
        sub.add_parser(name, parents=[common], help=helptext)
    rp = sub.add_parser("repro-table", parents=[common], help="reproduce one of the result tables")
    rp.add_argument("table", type=int, choices=sorted(TABLES))
    return parser


def _configure(args) -> tuple[dict, dict]:
    if args.config is not None:
        try:
            raw = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
        if "config" in raw and "config_hash" in raw:
            raw = raw["config"]
    else:
        raw = {}
    raw = copy.deepcopy(raw)
    if args.preset:
        raw["preset"] = args.preset
    if args.threads < 1:
        raise ConfigError("--threads must be at least 1")
    for sec in ("diagnostics", "solver", "output"):
        if sec in raw and not isinstance(raw[sec], dict):
            raise ConfigError(f"section {sec!r} must be an object")
    if args.seed is not None:
        raw.setdefault("diagnostics", {})["seed"] = args.seed
    if args.fast:
        raw.setdefault("solver", {})["fast"] = True
    if args.out is not None:
        raw.setdefault("output", {})["dir"] = args.out
    return cfgmod.resolve(raw), raw


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        cfg, raw = _configure(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    run = None
    try:
        run = Run(args.command, cfg, args)
        if args.command == "repro-table":
            run.command = f"repro-table{args.table}"
            cmd_repro(run, args.table, raw)
        else:
            COMMANDS[args.command](run)
        run.commit()
    except ConfigError as exc:
        if run is not None:
            run.abort()
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        if run is not None:
            run.abort()
        log.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
