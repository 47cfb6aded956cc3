"""Config-driven experiment runner.

One JSON document describes one experiment: a scenario, an operation, and
its parameters.  Outputs are CSV/JSON artifacts plus a manifest recording
the config hash, seed, and produced files.  Identical config and seed give
byte-identical numeric outputs.

Exit codes: 0 success, 2 config error, 3 compute error, 4 assertion failure
(``--assert`` mode).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import convergence as conv
from . import distance as dist
from . import functionals as func
from . import scenarios as scen
from . import topology as topo
from . import flow as _flow
from .core import CCError, ChartBox, PiecewiseConstantControl

__all__ = ["ConfigError", "ExperimentConfig", "validate_config", "run_experiment", "main"]

OPERATIONS = ("distance", "geodesic", "ball", "converge", "rescale-check",
              "relax-probe", "degree", "bracket", "reparam")

_TOP_KEYS = {"scenario", "operation", "params", "seed", "output_dir", "threads"}
_SCENARIO_KEYS = {"name", "parameters"}

_OP_KEYS = {
    "distance": {"p", "q", "param", "method", "segments", "restarts", "refine",
                 "endpoint_tol", "graph"},
    "geodesic": {"p", "q", "param", "segments", "restarts", "refine", "samples"},
    "ball": {"p", "radius", "param", "graph"},
    "converge": {"points", "method", "threshold", "slack", "segments", "restarts",
                 "graph", "no_cascade"},
    "rescale-check": {"pairs", "eps", "segments", "restarts", "tolerance"},
    "relax-probe": {"p", "q", "radius", "samples", "method", "segments",
                    "restarts", "graph", "noise"},
    "degree": {"map", "center", "radius", "samples", "sigma", "origin", "t_center",
               "param"},
    "bracket": {"point", "depth", "step", "param"},
    "reparam": {"start", "control", "param", "out_segments"},
}


class ConfigError(CCError):
    """Invalid experiment configuration; message names the offending key."""


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: scen.ScenarioSpec
    operation: str
    params: dict
    seed: int = 0
    output_dir: str = "out"
    threads: int = 1
    raw: dict = field(default="", repr=False)

    @property
    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True).encode()).hexdigest()


def _require_keys(d: dict, allowed: set, where: str):
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")


def validate_config(doc: dict) -> ExperimentConfig:
    """Schema-check a config document before any computation runs."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    _require_keys(doc, _TOP_KEYS, "config")
    for key in ("scenario", "operation"):
        if key not in doc:
            raise ConfigError(f"missing required key '{key}'")
    sdoc = doc["scenario"]
    if not isinstance(sdoc, dict):
        raise ConfigError("'scenario' must be an object")
    _require_keys(sdoc, _SCENARIO_KEYS, "scenario")
    if "name" not in sdoc:
        raise ConfigError("scenario needs a 'name'")
    name = sdoc["name"]
    if name not in scen.SCENARIO_NAMES:
        raise ConfigError(f"unknown scenario '{name}'; known: {list(scen.SCENARIO_NAMES)}")
    params_tab = sdoc.get("parameters", {})
    if not isinstance(params_tab, dict):
        raise ConfigError("scenario 'parameters' must be an object")
    _validate_scenario_params(name, params_tab)
    op = doc["operation"]
    if op not in OPERATIONS:
        raise ConfigError(f"unknown operation '{op}'; known: {list(OPERATIONS)}")
    op_params = doc.get("params", {})
    if not isinstance(op_params, dict):
        raise ConfigError("'params' must be an object")
    _require_keys(op_params, _OP_KEYS[op], f"params for operation '{op}'")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("'seed' must be an integer")
    threads = doc.get("threads", 1)
    if not isinstance(threads, int) or threads < 1:
        raise ConfigError("'threads' must be a positive integer")
    return ExperimentConfig(scen.ScenarioSpec(name, params_tab), op, op_params,
                            seed, doc.get("output_dir", "out"), threads, raw=doc)


_SCENARIO_PARAM_KEYS = {
    "euclidean": {"dim"},
    "heisenberg-eps": {"eps"},
    "dilation": {"eps", "weights", "perturbation"},
    "lie-left-invariant": {"n"},
    "strip-counterexample": {"n"},
    "generic-family": {"members", "limit_param"},
}


def _validate_scenario_params(name: str, tab: dict):
    _require_keys(tab, _SCENARIO_PARAM_KEYS[name], f"scenario '{name}' parameters")


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return validate_config(doc)


# ---------------------------------------------------------------------------
# serialization helpers (17 significant digits, fixed layouts)
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    v = float(x)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".17g")


def write_csv(path: Path, header: list, rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    raise TypeError(f"not JSON serializable: {type(x)}")


def trajectory_rows(traj):
    U = traj.control_values()
    for t, x, u in zip(traj.times, traj.points, U):
        yield [t, *x, *u]


def _traj_header(m, k):
    return ["t"] + [f"x_{i+1}" for i in range(m)] + [f"u_{j+1}" for j in range(k)]


# ---------------------------------------------------------------------------
# operation handlers
# ---------------------------------------------------------------------------

def _family(cfg: ExperimentConfig):
    return scen.build_scenario(cfg.scenario)

def _member(cfg, fam):
    lam = cfg.params.get("param", None)
    if lam is None:
        lam = fam.limit_param
    else:
        lam = float(lam) if not isinstance(lam, str) else lam
    return lam, fam.member(lam)


def _opt_options(cfg: ExperimentConfig) -> dist.OptOptions:
    p = cfg.params
    return dist.OptOptions(segments=int(p.get("segments", 16)),
                           restarts=int(p.get("restarts", 8)),
                           refine=int(p.get("refine", 0)),
                           endpoint_tol=float(p.get("endpoint_tol", 1e-6)),
                           seed=cfg.seed)


def _graph_spec(cfg: ExperimentConfig, fam) -> dist.GridGraphSpec:
    g = cfg.params.get("graph")
    if g is None:
        raise ConfigError("this operation needs a 'graph' table "
                          "{resolution: [...], tau: ...}")
    _require_keys(g, {"resolution", "tau", "snap_tol", "steps"}, "graph table")
    return dist.GridGraphSpec(resolution=tuple(g["resolution"]), tau=float(g["tau"]),
                              snap_tol=g.get("snap_tol"), steps=int(g.get("steps", 8)))


def _op_distance(cfg, out):
    fam = _family(cfg)
    lam, (f, N) = _member(cfg, fam)
    p = np.asarray(cfg.params["p"], dtype=float)
    q = np.asarray(cfg.params["q"], dtype=float)
    method = cfg.params.get("method", "control-opt")
    if method == "grid-graph":
        est = dist.cc_distance_graph(p, q, f, N, _graph_spec(cfg, fam), fam.box)
    elif method == "control-opt":
        est = dist.cc_distance_opt(p, q, f, N, fam.box, _opt_options(cfg))
    else:
        raise ConfigError(f"unknown method '{method}'")
    payload = est.to_json_dict()
    payload.update({"p": p.tolist(), "q": q.tolist(), "param": conv._plain(lam)})
    write_json(out / "distance.json", payload)
    files = [("distance.json", "distance estimate record")]
    if est.trajectory is not None:
        write_csv(out / "trajectory.csv", _traj_header(f.dim_m, f.dim_k),
                  trajectory_rows(est.trajectory))
        files.append(("trajectory.csv", "best-control trajectory samples"))
    return files, {"value": est.value, "converged": est.converged}, est.converged


def _op_geodesic(cfg, out):
    fam = _family(cfg)
    lam, (f, N) = _member(cfg, fam)
    p = np.asarray(cfg.params["p"], dtype=float)
    q = np.asarray(cfg.params["q"], dtype=float)
    traj, est = dist.geodesic(p, q, f, N, fam.box, _opt_options(cfg))
    write_csv(out / "geodesic.csv", _traj_header(f.dim_m, f.dim_k),
              trajectory_rows(traj))
    write_json(out / "geodesic.json", est.to_json_dict())
    return ([("geodesic.csv", "constant-speed geodesic samples"),
             ("geodesic.json", "distance estimate record")],
            {"value": est.value}, True)


def _op_ball(cfg, out):
    fam = _family(cfg)
    lam, (f, N) = _member(cfg, fam)
    p = np.asarray(cfg.params["p"], dtype=float)
    r = float(cfg.params["radius"])
    ball = dist.metric_ball(p, r, f, N, _graph_spec(cfg, fam), fam.box)
    m = f.dim_m
    rows = ([*pt, val] for pt, val in zip(ball.points, ball.values))
    write_csv(out / "ball.csv", [f"x_{i+1}" for i in range(m)] + ["value"], rows)
    return ([("ball.csv", "lattice nodes with distance <= radius")],
            {"nodes": int(len(ball.values))}, True)


def _table_options(cfg, fam) -> conv.TableOptions:
    method = cfg.params.get("method", "control-opt")
    gspec = _graph_spec(cfg, fam) if method == "grid-graph" else None
    return conv.TableOptions(method=method, opt=_opt_options(cfg), graph_spec=gspec,
                             threads=cfg.threads,
                             cascade=not cfg.params.get("no_cascade", False))


def _op_converge(cfg, out):
    fam = _family(cfg)
    pts = np.asarray(cfg.params["points"], dtype=float)
    rep = conv.uniform_convergence_report(
        fam, pts, _table_options(cfg, fam),
        threshold=float(cfg.params.get("threshold", 0.05)),
        slack=float(cfg.params.get("slack", 0.10)))
    write_csv(out / "convergence.csv",
              ["lambda", "pair_i", "pair_j", "d_lambda", "d_limit", "abs_dev"],
              rep.rows())
    write_json(out / "convergence.json", rep.to_json_dict())
    ok = rep.verdict == "consistent-with-uniform-convergence"
    return ([("convergence.csv", "per-pair distance deviations"),
             ("convergence.json", "sup deviations and verdict")],
            rep.to_json_dict(), ok)


def _op_rescale(cfg, out):
    fam = _family(cfg)
    if fam.name != "dilation":
        raise ConfigError("rescale-check requires the 'dilation' scenario")
    pairs = [(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
             for a, b in cfg.params["pairs"]]
    eps = [float(e) for e in cfg.params.get("eps", [0.5, 0.25])]
    base_f, base_n = fam.member(1.0)
    limit = fam.member(0.0)
    res = conv.rescaling_identity_check(base_f, base_n, [1, 1, 2], eps, pairs,
                                        limit, box=fam.box, opt=_opt_options(cfg))
    write_csv(out / "rescaling.csv", ["eps", "lhs", "rhs", "residual"],
              ([r["eps"], r["lhs"], r["rhs"], r["residual"]] for r in res["rows"]))
    write_json(out / "rescaling.json", res)
    tol = float(cfg.params.get("tolerance", 0.08))
    return ([("rescaling.csv", "per-pair identity residuals"),
             ("rescaling.json", "full rescaling check record")],
            {"max_residual": res["max_residual"]}, res["max_residual"] <= tol)


def _op_relax(cfg, out):
    fam = _family(cfg)
    probe = conv.relaxation_probe(
        fam, np.asarray(cfg.params["p"], dtype=float),
        np.asarray(cfg.params["q"], dtype=float),
        float(cfg.params.get("radius", 0.05)),
        int(cfg.params.get("samples", 8)),
        _table_options(cfg, fam),
        noise=float(cfg.params.get("noise", 0.08)), seed=cfg.seed)
    payload = {"limit_value": probe.limit_value,
               "min_over_neighbors": probe.min_over_neighbors,
               "witness": probe.witness, "consistent": probe.consistent,
               "noise": probe.noise}
    write_json(out / "relaxation.json", payload)
    return ([("relaxation.json", "relaxation probe record")], payload, True)


def _op_degree(cfg, out):
    fam = _family(cfg)
    lam, (f, N) = _member(cfg, fam)
    origin = np.asarray(cfg.params.get("origin", [0.0] * f.dim_m), dtype=float)
    sigma = tuple(cfg.params.get("sigma", range(1, f.dim_m + 1)))
    t_center = np.asarray(cfg.params.get("t_center", [0.1] * f.dim_m), dtype=float)
    probe = topo.essential_openness_probe(origin, f, sigma, t_center,
                                          float(cfg.params.get("radius", 0.05)),
                                          int(cfg.params.get("samples", 64)),
                                          box=fam.box)
    payload = {"open_at_scale": probe.open_at_scale, "winding": probe.winding,
               "margin": probe.margin, "reliable": probe.reliable}
    write_json(out / "degree.json", payload)
    return [("degree.json", "openness probe report")], payload, True


def _op_bracket(cfg, out):
    fam = _family(cfg)
    lam, (f, N) = _member(cfg, fam)
    p = np.asarray(cfg.params.get("point", [0.0] * f.dim_m), dtype=float)
    depth = int(cfg.params.get("depth", 2))
    h = float(cfg.params.get("step", 1e-4))
    ranks = {d: topo.bracket_span_rank(f, p, d, h) for d in range(1, depth + 1)}
    payload = {"point": p.tolist(), "ranks": {str(d): r for d, r in ranks.items()}}
    write_json(out / "bracket.json", payload)
    return [("bracket.json", "bracket span ranks by depth")], payload, True


def _op_reparam(cfg, out):
    fam = _family(cfg)
    lam, (f, N) = _member(cfg, fam)
    start = np.asarray(cfg.params.get("start", [0.0] * f.dim_m), dtype=float)
    ctrl = PiecewiseConstantControl(np.asarray(cfg.params["control"], dtype=float))
    rep = func.reparametrize_constant_speed(start, f, ctrl, N,
                                            cfg.params.get("out_segments"),
                                            box=fam.box)
    write_csv(out / "reparam.csv", _traj_header(f.dim_m, f.dim_k),
              trajectory_rows(rep.trajectory))
    payload = {"length": rep.length, "degenerate": rep.degenerate,
               "speed_deviation": rep.speed_deviation,
               "out_segments": rep.control.num_segments}
    write_json(out / "reparam.json", payload)
    return ([("reparam.csv", "constant-speed trajectory"),
             ("reparam.json", "reparametrization record")], payload, True)


_HANDLERS = {
    "distance": _op_distance,
    "geodesic": _op_geodesic,
    "ball": _op_ball,
    "converge": _op_converge,
    "rescale-check": _op_rescale,
    "relax-probe": _op_relax,
    "degree": _op_degree,
    "bracket": _op_bracket,
    "reparam": _op_reparam,
}


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None,
                   threads: int | None = None) -> dict:
    """Execute the configured operation and write its artifacts + manifest."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if threads is not None:
        cfg = replace(cfg, threads=threads)
    t0 = time.perf_counter()
    files, summary, ok = _HANDLERS[cfg.operation](cfg, out)
    wall = time.perf_counter() - t0
    manifest = {
        "config_sha256": cfg.digest,
        "operation": cfg.operation,
        "scenario": cfg.scenario.name,
        "seed": cfg.seed,
        "wall_time_s": wall,
        "files": [{"name": name, "about": about} for name, about in files],
        "summary": summary,
        "passed": bool(ok),
    }
    write_json(out / "manifest.json", manifest)
    return manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ccdist",
                                     description="CC-distance experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute an experiment config")
    run_p.add_argument("config")
    run_p.add_argument("--out", default=None, help="output directory")
    run_p.add_argument("--seed", type=int, default=None, help="override config seed")
    run_p.add_argument("--threads", type=int,
                       default=int(os.environ.get("CCDIST_THREADS", "0")) or None)
    run_p.add_argument("--assert", dest="assert_mode", action="store_true",
                       help="exit 4 unless the operation's acceptance check passes")

    val_p = sub.add_parser("validate", help="schema-check a config and exit")
    val_p.add_argument("config")

    sub.add_parser("scenarios", help="list built-in scenarios")

    args = parser.parse_args(argv)

    if args.command == "scenarios":
        print(json.dumps(scenario_listing(), indent=2))
        return 0

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if args.command == "validate":
        print("ok")
        return 0

    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed, raw={**cfg.raw, "seed": args.seed})
    try:
        manifest = run_experiment(cfg, out_dir=args.out, threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (CCError, ValueError) as exc:
        print(f"compute error: {exc}", file=sys.stderr)
        return 3
    print(json.dumps(manifest["summary"], indent=2, sort_keys=True, default=_json_default))
    if args.assert_mode and not manifest["passed"]:
        return 4
    return 0


def scenario_listing():
    return scen.scenario_summaries()


if __name__ == "__main__":
    sys.exit(main())
