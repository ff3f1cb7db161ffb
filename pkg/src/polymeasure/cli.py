"""Command-line front end.

Every subcommand reads one JSON config (``--config``) and writes CSV files
into the output directory (``--out``, else ``$POLYMEASURE_OUT``, else the
current directory). Exit codes: 0 success, 1 domain failure, 2 usage or
schema error. Files are staged in a temporary directory and moved into place
only when the whole command succeeds.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import shutil
import sys
import tempfile

import jsonschema
import numpy as np

from . import __version__
from .affine import BlowupError, NotAffineError, is_affine, solve_riccati
from .continuum import PRESETS, preset
from .generator import OperatorSpec, ProbeFunction, pmp_probe, validate
from .measures import Grid, MeasureVec, PolyRep
from .moments import moment_surface
from .simulate import NonPSDError, estimate, simulate, summary_csv, terminal_values, write_binary

CONFIG_VERSION = 1
EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2

_num = {"type": "number"}
_vec = {"type": "array", "items": _num}
_mat = {"type": "array", "items": _vec}
_poly = {
    "type": "object",
    "properties": {
        "constant": _num,
        "linear": _vec,
        "const": _num,
        "power": {"type": "object", "properties": {"g": _vec, "n": {"type": "integer", "minimum": 0}},
                  "required": ["g", "n"], "additionalProperties": False},
        "terms": {"type": "array"},
    },
    "additionalProperties": False,
    "minProperties": 1,
}

SCHEMA = {
    "type": "object",
    "properties": {
        "version": {"const": CONFIG_VERSION},
        "grid": {
            "type": "object",
            "properties": {
                "points": {"type": "array", "minItems": 1},
                "size": {"type": "integer", "minimum": 1},
                "uniform": {"type": "array", "items": _num, "minItems": 3, "maxItems": 3},
            },
            "minProperties": 1, "maxProperties": 1, "additionalProperties": False,
        },
        "preset": {
            "type": "object",
            "properties": {"name": {"enum": list(PRESETS)}, "m": {"type": "integer", "minimum": 1},
                           "params": {"type": "object"}},
            "required": ["name"], "additionalProperties": False,
        },
        "spec": {
            "type": "object",
            "properties": {"b": _vec, "B1": _mat, "alpha": _vec, "beta": _mat, "pi": _mat,
                           "loadings": _mat},
            "additionalProperties": False,
        },
        "initial": _vec,
        "T": {"type": "number", "minimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "solver": {
            "type": "object",
            "properties": {"steps": {"type": "integer", "minimum": 1},
                           "mc_steps": {"type": "integer", "minimum": 1},
                           "paths": {"type": "integer", "minimum": 0}},
            "additionalProperties": False,
        },
        "moments": {
            "type": "object",
            "properties": {"polynomial": _poly, "times": _vec},
            "required": ["polynomial"], "additionalProperties": False,
        },
        "laplace": {
            "type": "object",
            "properties": {"g": _vec, "stride": {"type": "integer", "minimum": 1}},
            "required": ["g"], "additionalProperties": False,
        },
        "simulate": {
            "type": "object",
            "properties": {"polynomials": {"type": "object", "additionalProperties": _poly},
                           "record_every": {"type": "integer", "minimum": 1},
                           "binary": {"type": "boolean"}},
            "additionalProperties": False,
        },
        "futures": {
            "type": "object",
            "properties": {
                "periods": {"type": "array", "minItems": 1, "items": {
                    "type": "object",
                    "properties": {"name": {"type": "string"}, "tau1": _num, "tau2": _num,
                                   "weights": _vec},
                    "required": ["tau1", "tau2"], "additionalProperties": False}},
                "mc": {"type": "boolean"},
            },
            "required": ["periods"], "additionalProperties": False,
        },
        "probe": {
            "type": "object",
            "properties": {"functions": {"type": "integer", "minimum": 1},
                           "restarts": {"type": "integer", "minimum": 1},
                           "tol": _num},
            "additionalProperties": False,
        },
    },
    "required": ["version"],
    "additionalProperties": False,
}


class ConfigError(Exception):
    """Usage or schema problem (exit code 2)."""


class DomainError(Exception):
    """The request is well-formed but fails on the model side (exit code 1)."""


# ---------------------------------------------------------------- config helpers

def load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"schema error at {where}: {exc.message}") from exc
    if "preset" in cfg and ("spec" in cfg or "grid" in cfg):
        raise ConfigError("give either a preset or grid/spec, not both")
    if "preset" not in cfg and "spec" not in cfg:
        raise ConfigError("config needs a preset or a spec")
    return cfg


def _grid_from(cfg: dict, m: int | None) -> Grid:
    g = cfg.get("grid")
    if g is None:
        if m is None:
            raise ConfigError("cannot infer grid size; add a grid block")
        return Grid.of_size(m)
    try:
        if "points" in g:
            return Grid(tuple(g["points"]))
        if "size" in g:
            return Grid.of_size(g["size"])
        a, b, n = g["uniform"]
        if n != int(n) or n < 1:
            raise ConfigError("uniform grid size must be a positive integer")
        return Grid.uniform(a, b, int(n))
    except ValueError as exc:
        raise ConfigError(f"bad grid: {exc}") from exc


def build_model(cfg: dict):
    """``(spec, grid, nu0)`` from a preset or from explicit arrays."""
    if "preset" in cfg:
        p = cfg["preset"]
        try:
            spec, grid, nu0 = preset(p["name"], p.get("m"), **p.get("params", {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad preset: {exc}") from exc
        if "initial" in cfg:
            nu0 = _measure(grid, cfg["initial"])
        return spec, grid, nu0
    raw = cfg["spec"]
    m = None
    if "grid" in cfg:
        m = _grid_from(cfg, None).size
    try:
        spec = OperatorSpec.from_dict(raw, m)
    except ValueError as exc:
        raise ConfigError(f"bad spec arrays: {exc}") from exc
    grid = _grid_from(cfg, spec.m)
    if grid.size != spec.m:
        raise ConfigError(f"grid has {grid.size} points but the operator spec has m={spec.m}")
    nu0 = _measure(grid, cfg.get("initial", np.ones(spec.m)))
    return spec, grid, nu0


def _measure(grid: Grid, weights) -> MeasureVec:
    try:
        return MeasureVec(grid, np.asarray(weights, dtype=float))
    except ValueError as exc:
        raise ConfigError(f"bad initial weights: {exc}") from exc


def build_poly(grid: Grid, desc: dict) -> PolyRep:
    try:
        if "terms" in desc:
            return PolyRep(grid, [np.asarray(t, dtype=float) for t in desc["terms"]])
        if "power" in desc:
            return PolyRep.power(grid, np.asarray(desc["power"]["g"], dtype=float), desc["power"]["n"])
        if "linear" in desc:
            return PolyRep.linear(grid, np.asarray(desc["linear"], dtype=float), desc.get("const", 0.0))
        if "constant" in desc:
            return PolyRep.constant(grid, desc["constant"])
    except ValueError as exc:
        raise ConfigError(f"bad polynomial: {exc}") from exc
    raise ConfigError("polynomial needs one of terms, power, linear, constant")


def _block(cfg: dict, name: str) -> dict:
    if name not in cfg:
        raise ConfigError(f"config has no '{name}' block")
    return cfg[name]


def _solver(cfg: dict, args) -> dict:
    s = {"steps": 1000, "mc_steps": 200, "paths": 10000, **cfg.get("solver", {})}
    if args.steps is not None:
        s["steps"] = s["mc_steps"] = args.steps
    if args.paths is not None:
        s["paths"] = args.paths
    s["seed"] = args.seed if args.seed is not None else cfg.get("seed", 0)
    return s


def _require_valid(spec: OperatorSpec):
    report = validate(spec)
    if not report.ok:
        names = ", ".join(report.failed)
        raise DomainError(f"spec is not admissible (failed: {names})")


def _write_rows(path: str, header: list, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


# ------------------------------------------------------------------- commands

def cmd_validate(cfg: dict, args, out: str) -> int:
    spec, _, _ = build_model(cfg)
    report = validate(spec)
    text = report.to_json()
    print(text)
    with open(os.path.join(out, "validate.json"), "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    if not report.ok:
        for name in report.failed:
            print(f"failed: {name}: {report[name].description}", file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


def cmd_moments(cfg: dict, args, out: str) -> int:
    spec, grid, nu0 = build_model(cfg)
    _require_valid(spec)
    block = _block(cfg, "moments")
    p = build_poly(grid, block["polynomial"])
    T = cfg.get("T", 1.0)
    times = block.get("times", [T])
    s = _solver(cfg, args)
    values = moment_surface(spec, p, nu0, times, n_steps=s["steps"])
    _write_rows(os.path.join(out, "moments.csv"), ["t", "value"],
                [(float(t), float(v)) for t, v in zip(times, values)])
    return EXIT_OK


def cmd_laplace(cfg: dict, args, out: str) -> int:
    spec, grid, nu0 = build_model(cfg)
    if not is_affine(spec):
        raise DomainError("laplace needs an affine spec; this one has Q2 != 0 "
                          "(beta, pi or loadings non-zero)")
    _require_valid(spec)
    block = _block(cfg, "laplace")
    g = np.asarray(block["g"], dtype=float)
    if g.shape != (spec.m,):
        raise ConfigError(f"laplace.g must have {spec.m} entries")
    if np.any(g > 0):
        raise ConfigError("laplace.g must be non-positive")
    s = _solver(cfg, args)
    sol = solve_riccati(spec, g, cfg.get("T", 1.0), n_steps=s["steps"])
    if sol.blowup:
        raise DomainError("finite-time explosion (numerical)")
    stride = block.get("stride", max(1, s["steps"] // 100))
    idx = list(range(0, len(sol.times), stride))
    if idx[-1] != len(sol.times) - 1:
        idx.append(len(sol.times) - 1)
    c0 = np.asarray(nu0.weights)
    rows = []
    for i in idx:
        rows.append([float(sol.times[i]), *map(float, sol.psi[i]), float(sol.phi[i]),
                     math.exp(sol.phi[i] + float(sol.psi[i] @ c0))])
    header = ["t"] + [f"psi_{i}" for i in range(spec.m)] + ["phi", "laplace"]
    _write_rows(os.path.join(out, "laplace.csv"), header, rows)
    return EXIT_OK


def cmd_simulate(cfg: dict, args, out: str) -> int:
    spec, grid, nu0 = build_model(cfg)
    _require_valid(spec)
    block = cfg.get("simulate", {})
    s = _solver(cfg, args)
    if s["paths"] < 1:
        raise ConfigError("simulate needs paths >= 1")
    polys = {name: build_poly(grid, d) for name, d in block.get("polynomials", {}).items()}
    if not polys:
        polys = {"mass": PolyRep.linear(grid, np.ones(grid.size))}
    ens = simulate(spec, nu0, cfg.get("T", 1.0), s["mc_steps"], s["paths"], s["seed"],
                   record_every=block.get("record_every", s["mc_steps"]))
    summary_csv(ens, polys, os.path.join(out, "simulate_summary.csv"))
    if block.get("binary", False):
        write_binary(ens, os.path.join(out, "paths.bin"))
    return EXIT_OK


def futures_weights(grid: Grid, period: dict) -> np.ndarray:
    """Weight vector of one delivery period; uniform ``1/count`` unless given."""
    if not grid.is_numeric:
        raise ConfigError("futures need a numeric grid of delivery times")
    tau1, tau2 = period["tau1"], period["tau2"]
    if not tau1 < tau2:
        raise ConfigError("delivery period needs tau1 < tau2")
    u = grid.as_array()
    inside = (u >= tau1) & (u <= tau2)
    count = int(inside.sum())
    if count == 0:
        raise DomainError(f"delivery period [{tau1}, {tau2}] contains no grid nodes")
    w = np.zeros(grid.size)
    if "weights" in period:
        given = np.asarray(period["weights"], dtype=float)
        if given.shape != (count,) or np.any(given < 0):
            raise ConfigError(f"period weights must be {count} non-negative numbers")
        w[inside] = given
    else:
        w[inside] = 1.0 / count
    return w


def cmd_price_futures(cfg: dict, args, out: str) -> int:
    spec, grid, nu0 = build_model(cfg)
    _require_valid(spec)
    block = _block(cfg, "futures")
    s = _solver(cfg, args)
    T = cfg.get("T", 1.0)
    weights = [futures_weights(grid, p) for p in block["periods"]]
    use_mc = block.get("mc", True) and s["paths"] > 0
    ens = simulate(spec, nu0, T, s["mc_steps"], s["paths"], s["seed"],
                   record_every=s["mc_steps"]) if use_mc else None
    rows = []
    for k, (period, w) in enumerate(zip(block["periods"], weights)):
        lin = PolyRep.linear(grid, w)
        mean, second = moment_surface(spec, lin, nu0, [T], n_steps=s["steps"])[0], \
            moment_surface(spec, PolyRep.power(grid, w, 2), nu0, [T], n_steps=s["steps"])[0]
        var = second - mean * mean
        std = math.sqrt(max(var, 0.0))
        row = [period.get("name", f"P{k + 1}"), float(period["tau1"]), float(period["tau2"]),
               mean, std, var]
        if ens is not None:
            vals = terminal_values(ens, lin)
            p05, p50, p95 = np.percentile(vals, [5, 50, 95])
            mc_mean, mc_se = estimate(ens, lin)
            row += [float(p05), float(p50), float(p95), mc_mean, mc_se, float(np.var(vals, ddof=1))]
        else:
            row += [""] * 6
        rows.append(row)
    header = ["period", "tau1", "tau2", "mean", "std", "variance",
              "p05", "p50", "p95", "mc_mean", "mc_se", "mc_variance"]
    _write_rows(os.path.join(out, "futures.csv"), header, rows)
    return EXIT_OK


def cmd_probe(cfg: dict, args, out: str) -> int:
    spec, _, _ = build_model(cfg)
    block = cfg.get("probe", {})
    s = _solver(cfg, args)
    rng = np.random.default_rng(s["seed"])
    tol = block.get("tol", 1e-6)
    rows, bad = [], 0
    for k in range(block.get("functions", 10)):
        f = ProbeFunction.random(spec.m, rng)
        rep = pmp_probe(spec, f, restarts=block.get("restarts", 20), seed=s["seed"] + k, tol=tol)
        bad += int(rep.violation)
        rows.append([k, rep.value, rep.generator_value, int(rep.violation)])
    _write_rows(os.path.join(out, "probe.csv"), ["probe", "max_value", "Lf", "violation"], rows)
    if bad:
        print(f"{bad} positive maximum principle violation(s)", file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "moments": cmd_moments,
    "laplace": cmd_laplace,
    "simulate": cmd_simulate,
    "price-futures": cmd_price_futures,
    "probe": cmd_probe,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="polymeasure", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="output directory (default $POLYMEASURE_OUT or .)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--paths", type=int, help="override solver.paths")
        p.add_argument("--steps", type=int, help="override solver.steps and solver.mc_steps")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    out = args.out or os.environ.get("POLYMEASURE_OUT") or "."
    try:
        for flag in ("seed", "paths", "steps"):
            v = getattr(args, flag)
            if v is not None and v < (1 if flag == "steps" else 0):
                raise ConfigError(f"--{flag} out of range")
        cfg = load_config(args.config)
        os.makedirs(out, exist_ok=True)
        with tempfile.TemporaryDirectory(dir=out, prefix=".stage-") as stage:
            code = COMMANDS[args.command](cfg, args, stage)
            for name in os.listdir(stage):
                shutil.move(os.path.join(stage, name), os.path.join(out, name))
        return code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, NotAffineError, BlowupError, NonPSDError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
