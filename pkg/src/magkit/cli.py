"""Command-line runner: ``magkit run``, ``magkit check`` and ``magkit plot``.

Exit codes: 0 success, 1 invalid input, 2 numeric failure, 3 failed invariant.
"""
import argparse
import copy
import json
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, _io, checks
from .branching import branch_schedule, simulate_branching
from .dynamics import (
    KappaSchedule,
    Trajectory,
    integrate_eps_mag,
    integrate_mag_limit,
    simulate_heat_path,
    simulate_heat_paths,
    simulate_surfing_sde,
)
from .errors import CapabilityError, InvariantError, NumericFailure, ValidationError
from .heatflow import FlowParams
from .kmap import PermutationOrbit, SourceSet
from .plotting import plot_run

KINDS = ["kmap-dynamics", "mag-limit", "surfing-sde", "heat-paths", "branching", "entropic-checks", "identity-suite"]

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_vec = {"type": "array", "items": _num}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": KINDS},
        "problem": {
            "type": "object",
            "additionalProperties": False,
            "required": ["d", "k", "sources"],
            "properties": {
                "d": {"type": "integer", "minimum": 1},
                "k": {"type": "integer", "minimum": 1},
                "sources": {"oneOf": [
                    {"type": "array", "items": _vec},
                    {"type": "string", "pattern": r"^random:-?\d+,[0-9.eE+-]+$"},
                ]},
            },
        },
        "physics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epsilon": _pos,
                "eta": {"type": "number", "minimum": 0},
                "kappa": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["power", "constant", "table"]},
                        "coef": _pos,
                        "nodes": _vec,
                        "values": _vec,
                    },
                },
                "eps_sweep": {"type": "array", "items": _pos, "minItems": 2},
            },
        },
        "time": {
            "type": "object",
            "additionalProperties": False,
            "required": ["clock", "h"],
            "properties": {
                "clock": {"enum": ["s", "t"]},
                "t0": _num, "t1": _num,
                "s0": {"type": "number", "minimum": 0}, "s1": _pos,
                "h": _pos,
            },
        },
        "numerics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "k_max": {"type": "integer", "minimum": 1, "maximum": 10},
                "rel_tol": {"type": "number", "minimum": 0},
                "fd_step_scale": _pos,
            },
        },
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "required": ["position"],
            "properties": {"position": _vec, "velocity": _vec},
        },
        "branching": {
            "type": "object",
            "additionalProperties": False,
            "required": ["N"],
            "properties": {
                "N": {"type": "integer", "minimum": 1},
                "R0": _pos,
                "m0": _pos,
                "p": {"type": "number", "minimum": 1},
                "variant": {"enum": ["auto", "increasing", "general"]},
            },
        },
        "paths": {"type": "integer", "minimum": 1},
        "suite": {"enum": sorted(checks.SUITES)},
        "seed": {"type": "integer", "minimum": 0},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "formats": {"type": "array", "items": {"enum": ["csv", "json", "svg"]}, "uniqueItems": True},
            },
        },
    },
}

NEEDS = {
    "kmap-dynamics": ["problem", "physics.epsilon", "time", "initial"],
    "mag-limit": ["problem", "time", "initial"],
    "surfing-sde": ["problem", "physics.epsilon", "time", "initial"],
    "heat-paths": ["problem", "physics.epsilon", "time"],
    "branching": ["problem", "physics.epsilon", "time", "branching"],
    "entropic-checks": [],
    "identity-suite": [],
}
CLOCK = {"kmap-dynamics": "t", "mag-limit": "t", "surfing-sde": "s", "heat-paths": "s", "branching": "s"}


def _path_of(error):
    parts = [str(p) for p in error.absolute_path]
    if error.validator == "required":
        missing = [p for p in error.validator_value if p not in error.instance]
        parts.append(missing[0] if missing else "?")
        return ".".join(parts), "required field missing"
    if error.validator == "additionalProperties":
        extra = sorted(set(error.instance) - set(error.schema.get("properties", {})))
        parts.append(extra[0] if extra else "?")
        return ".".join(parts), "unknown key"
    return ".".join(parts) or "<root>", error.message


def _get(cfg, dotted):
    node = cfg
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            return None
        node = node[part]
    return node


def validate_config(cfg):
    """Schema and cross-field validation; returns the config with defaults filled in."""
    if not isinstance(cfg, dict):
        raise ValidationError("<root>: config must be a JSON object")
    errors = sorted(jsonschema.Draft7Validator(SCHEMA).iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        where, what = _path_of(errors[0])
        raise ValidationError(f"{where}: {what}")
    kind = cfg["kind"]
    for need in NEEDS[kind]:
        if _get(cfg, need) is None:
            raise ValidationError(f"{need}: required field missing")
    cfg = copy.deepcopy(cfg)
    cfg.setdefault("seed", 0)
    num = cfg.setdefault("numerics", {})
    num.setdefault("k_max", 8)
    num.setdefault("rel_tol", 1e-9)
    num.setdefault("fd_step_scale", 1e-5)
    out = cfg.setdefault("output", {})
    out.setdefault("formats", ["csv", "json"])
    if "physics" in cfg:
        phys = cfg["physics"]
        phys.setdefault("eta", 0.0)
        phys.setdefault("kappa", {"kind": "power", "coef": 2.0})
        phys["kappa"].setdefault("coef", 2.0)
    if kind in CLOCK:
        tm = cfg["time"]
        want = CLOCK[kind]
        if tm["clock"] != want:
            raise ValidationError(f"time.clock: {kind} runs on the {want}-clock")
        lo, hi = (f"{want}0", f"{want}1")
        for key in (lo, hi):
            if key not in tm:
                raise ValidationError(f"time.{key}: required field missing")
        if not tm[hi] > tm[lo]:
            raise ValidationError(f"time.{hi}: must exceed time.{lo}")
    if "problem" in cfg:
        prob = cfg["problem"]
        if isinstance(prob["sources"], list):
            arr = prob["sources"]
            if len(arr) != prob["k"] or any(len(p) != prob["d"] for p in arr):
                raise ValidationError("problem.sources: expected k points of dimension d")
        dim = prob["d"] * prob["k"]
        for key in ("position", "velocity"):
            vec = _get(cfg, f"initial.{key}")
            if vec is not None and len(vec) != dim:
                raise ValidationError(f"initial.{key}: expected {dim} coordinates")
    if kind == "identity-suite":
        cfg.setdefault("suite", "identity")
    if kind == "branching":
        br = cfg["branching"]
        br.setdefault("m0", 1.0)
        br.setdefault("p", 2)
        br.setdefault("variant", "auto")
    if kind == "heat-paths":
        cfg.setdefault("paths", 1)
    return cfg


def _orbit(cfg):
    prob = cfg["problem"]
    src = prob["sources"]
    if isinstance(src, str):
        seed, spread = src.split(":", 1)[1].split(",")
        source = SourceSet.random(prob["k"], prob["d"], int(seed), float(spread))
    else:
        source = SourceSet(np.array(src, dtype=float))
    return PermutationOrbit(source, cfg["numerics"]["k_max"])


def _kappa(kcfg):
    if kcfg["kind"] == "table":
        if "nodes" not in kcfg or "values" not in kcfg:
            raise ValidationError("physics.kappa: table needs nodes and values")
        return KappaSchedule.table(kcfg["nodes"], kcfg["values"])
    return KappaSchedule(kcfg["kind"], kcfg["coef"])


def _run_kind(cfg, out):
    kind = cfg["kind"]
    formats = cfg["output"]["formats"]
    seed = cfg["seed"]
    rel_tol = cfg["numerics"]["rel_tol"]
    extra = {}
    if kind in ("identity-suite", "entropic-checks"):
        suite = cfg.get("suite", "identity") if kind == "identity-suite" else "entropic"
        results = checks.run_suite(suite)
        report = {"suite": suite, "passed": all(r.passed for r in results),
                  "checks": [r.record() for r in results]}
        _io.write_json(out / "report.json", report)
        for r in results:
            print(r.line())
        return 0 if report["passed"] else 3, extra
    orbit = _orbit(cfg)
    tm = cfg["time"]
    if kind == "heat-paths":
        params = FlowParams(cfg["physics"]["epsilon"], orbit)
        s_grid = np.linspace(tm["s0"], tm["s1"], int(round((tm["s1"] - tm["s0"]) / tm["h"])) + 1)
        n = cfg["paths"]
        if n == 1:
            simulate_heat_path(seed, s_grid, params).to_csv(out / "trajectory.csv")
        else:
            for i, pos in enumerate(simulate_heat_paths(seed, s_grid, params, n)):
                Trajectory("s", s_grid, pos).to_csv(out / f"trajectory_{i:03d}.csv")
    elif kind == "kmap-dynamics":
        params = FlowParams(cfg["physics"]["epsilon"], orbit)
        y0 = cfg["initial"]["position"]
        v0 = cfg["initial"].get("velocity", [0.0] * orbit.dim)
        traj = integrate_eps_mag(y0, v0, tm["t0"], tm["t1"], tm["h"], params)
        traj.to_csv(out / "trajectory.csv")
        extra["energy_drift"] = traj.diagnostics["energy_drift"]
        sweep = cfg["physics"].get("eps_sweep")
        if sweep:
            limit = integrate_mag_limit(y0, v0, tm["t0"], tm["t1"], tm["h"], orbit, rel_tol)
            rows = []
            for eps in sorted(sweep):
                tr = integrate_eps_mag(y0, v0, tm["t0"], tm["t1"], tm["h"], FlowParams(eps, orbit), diagnostics=False)
                rows.append((float(eps), float(np.linalg.norm(tr.positions[-1] - limit.positions[-1]))))
            _io.write_csv(out / "error_curves.csv", ["epsilon", "error"], rows)
    elif kind == "mag-limit":
        y0 = cfg["initial"]["position"]
        v0 = cfg["initial"].get("velocity", [0.0] * orbit.dim)
        traj = integrate_mag_limit(y0, v0, tm["t0"], tm["t1"], tm["h"], orbit, rel_tol)
        traj.to_csv(out / "trajectory.csv")
        traj.events_to_jsonl(out / "events.jsonl")
        extra["shock_events"] = len(traj.events)
    elif kind == "surfing-sde":
        params = FlowParams(cfg["physics"]["epsilon"], orbit)
        traj = simulate_surfing_sde(cfg["initial"]["position"], tm["s0"], tm["s1"], tm["h"], params,
                                    cfg["physics"]["eta"], _kappa(cfg["physics"]["kappa"]), seed)
        traj.to_csv(out / "trajectory.csv")
    elif kind == "branching":
        phys = cfg["physics"]
        br = cfg["branching"]
        params = FlowParams(phys["epsilon"], orbit)
        kappa = _kappa(phys["kappa"])
        R0 = br.get("R0", 4.0 * orbit.r)
        plan = branch_schedule(br["N"], (tm["s0"], tm["s1"]), kappa, orbit.dim, R0=R0, m0=br["m0"],
                               variant=br["variant"])
        path, events = simulate_branching(plan, params, seed, tm["h"], p=br["p"])
        _io.write_jsonl(out / "events.jsonl", [e.record() for e in events])
        rows = []
        for time, _, cloud in path.snapshots:
            for i, pt in enumerate(cloud.points):
                rows.append([float(time), i] + [float(v) for v in pt])
        _io.write_csv(out / "clouds.csv", ["time", "particle_id"] + [f"coord_{j}" for j in range(orbit.dim)], rows)
        extra["branching_manifest"] = {
            "seed": seed, "N": br["N"], "exponents": [str(e) for e in plan.exponents],
            "R0": R0, "m0": br["m0"], "epsilon": phys["epsilon"], "kappa": kappa.to_dict(),
            "horizon": [tm["s0"], tm["s1"]], "R": plan.R, "m": plan.m, "events": len(events),
        }
    if "svg" in formats:
        plot_run(out, "trajectory" if kind != "branching" else "cloud-film")
        if (out / "error_curves.csv").exists():
            plot_run(out, "error-curves")
    return 0, extra


def run_config(cfg, out_dir=None):
    """Validate ``cfg`` and run it into ``out_dir``; returns the exit code."""
    try:
        cfg = validate_config(cfg)
        out = Path(out_dir or cfg["output"].get("dir") or "magkit-run")
        out.mkdir(parents=True, exist_ok=True)
        code, extra = _run_kind(cfg, out)
        manifest = {"tool": "magkit", "version": __version__, "seed": cfg["seed"], "config": cfg}
        manifest.update(extra.pop("branching_manifest", {}))
        if extra:
            manifest["summary"] = extra
        if "json" in cfg["output"]["formats"] or cfg["kind"] == "branching":
            _io.write_json(out / "manifest.json", manifest)
        return code
    except (ValidationError, CapabilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except InvariantError as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return 3


def _cmd_run(args):
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 1
    except json.JSONDecodeError as exc:
        print(f"error: config is not valid JSON: {exc}", file=sys.stderr)
        return 1
    return run_config(cfg, args.out)


def _cmd_check(args):
    try:
        results = checks.run_suite(args.suite)
    except KeyError:
        print(f"error: unknown suite {args.suite!r}; choose from {', '.join(sorted(checks.SUITES))}", file=sys.stderr)
        return 1
    for r in results:
        print(r.line())
    if args.json:
        print(_io.dumps({"suite": args.suite, "checks": [r.record() for r in results]}))
    return 0 if all(r.passed for r in results) else 3


def _cmd_plot(args):
    try:
        written = plot_run(Path(args.run), args.what)
    except (ValidationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for p in written:
        print(p)
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="magkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"magkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment from a JSON config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out")
    p_run.set_defaults(func=_cmd_run)
    p_check = sub.add_parser("check", help="run an identity-check suite")
    p_check.add_argument("--suite", required=True)
    p_check.add_argument("--json", action="store_true", help="also print a JSON report")
    p_check.set_defaults(func=_cmd_check)
    p_plot = sub.add_parser("plot", help="render SVG plots from a run directory")
    p_plot.add_argument("--run", required=True)
    p_plot.add_argument("--what", required=True, choices=["trajectory", "cloud-film", "error-curves"])
    p_plot.set_defaults(func=_cmd_plot)
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
