"""Command-line entry point: ``riskplan <command> CONFIG [options]``.

A run is described by one JSON config::

    {
      "scenario": {...grid keys...} | "model": "path/to/model.json",
      "measure": {"kind": "evar", "epsilon": 0.2},
      "budgets": [50.0],
      "solver": {...}, "pi": {...},
      "mc": {"n_runs": 100, "horizon": 400, "master_seed": 0},
      "output_dir": "out"
    }

Every artifact lands in ``output_dir`` together with a manifest holding
the resolved config and sha256 hashes. Artifacts never contain timings or
paths that vary between runs; timings go to the console only.

Exit codes: 0 success, 2 config error, 3 solver failure, 4 input mismatch.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from .dual import Status
from .exceptions import (
    ConfigError,
    DimensionMismatch,
    ImpossibleObservation,
    InvalidModel,
    IterationCap,
    NoFeasibleLayout,
    RiskPlanError,
)
from .gridworld import GridSpec, generate_layout
from .mdp_solver import SolverParams, export_dcp, solve_constrained
from .model import Fsc, Mdp, Pomdp, from_dict, to_dict
from .pomdp_solver import PiParams, policy_iteration
from .sim import heatmap_csv, monte_carlo, records_csv, rollout, summarize
from .validation import check_measure, check_mdp, check_pomdp

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_MISMATCH = 0, 2, 3, 4

_TOP_KEYS = {"scenario", "model", "measure", "budgets", "solver", "pi", "mc", "output_dir"}
_MC_KEYS = {"n_runs", "horizon", "master_seed", "perturb", "epsilon", "keep_records"}
_MC_DEFAULTS = {"n_runs": 100, "horizon": 400, "master_seed": 0, "perturb": True,
                "epsilon": None, "keep_records": False}


class _Fail(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


# --- config --------------------------------------------------------------------


def load_config(path, seed=None, epsilon=None, measure=None, out=None):
    """Read a config file and apply the command-line overrides."""
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    extra = set(cfg) - _TOP_KEYS
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    if ("scenario" in cfg) == ("model" in cfg):
        raise ConfigError("config needs exactly one of 'scenario' or 'model'")
    cfg = copy.deepcopy(cfg)
    base = Path(path).resolve().parent
    if "model" in cfg:
        mpath = Path(cfg["model"])
        if not mpath.is_absolute():
            mpath = base / mpath
        if not mpath.is_file():
            raise ConfigError(f"model file {mpath} does not exist")
        cfg["_model_path"] = str(mpath)
    if seed is not None:
        if "scenario" not in cfg:
            raise ConfigError("--seed only applies to grid scenarios")
        cfg["scenario"]["seed"] = int(seed)
    m = cfg.get("measure", {"kind": "expectation"})
    if isinstance(m, str):
        m = {"kind": m}
    if measure is not None:
        m = {"kind": measure, "epsilon": m.get("epsilon", 0.2)}
    if epsilon is not None:
        m["epsilon"] = float(epsilon)
    cfg["measure"] = check_measure(m.get("kind", "expectation"), m.get("epsilon", 1.0)).to_dict()
    if out is not None:
        cfg["output_dir"] = str(out)
    if "output_dir" not in cfg:
        raise ConfigError("config needs 'output_dir' (or pass --out)")
    mc = cfg.get("mc", {})
    bad = set(mc) - _MC_KEYS
    if bad:
        raise ConfigError(f"unknown mc keys: {sorted(bad)}")
    cfg["mc"] = {**_MC_DEFAULTS, **mc}
    return cfg


def _solver_params(cfg):
    try:
        return SolverParams.from_dict(cfg.get("solver", {}))
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"bad solver settings: {exc}") from exc


def _pi_params(cfg):
    d = dict(cfg.get("pi", {}))
    d["solver"] = cfg.get("solver", {})
    try:
        return PiParams.from_dict(d)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"bad policy-iteration settings: {exc}") from exc


def _world(cfg):
    if "scenario" not in cfg:
        return None
    spec = GridSpec.from_dict(cfg["scenario"])
    return generate_layout(spec)


def _load_model(cfg):
    """Return (world or None, model) with budgets overridden from the config."""
    world = _world(cfg)
    if world is not None:
        model = world.pomdp()
    else:
        from .model import load_json
        try:
            model = load_json(cfg["_model_path"])
        except (KeyError, ValueError) as exc:
            raise DimensionMismatch(f"cannot read model file: {exc}") from exc
    if "budgets" in cfg:
        b = np.asarray(cfg["budgets"], dtype=float).ravel()
        mdp = model.mdp if isinstance(model, Pomdp) else model
        if b.size != mdp.num_constraints:
            raise DimensionMismatch(f"config gives {b.size} budgets, model has "
                                    f"{mdp.num_constraints} constraints")
        mdp = mdp.with_budgets(b)
        model = Pomdp(mdp, model.observation) if isinstance(model, Pomdp) else mdp
    return world, model


def _public_config(cfg):
    return {k: v for k, v in cfg.items() if not k.startswith("_")}


# --- output ----------------------------------------------------------------------


def _dump(obj):
    return json.dumps(obj, indent=2) + "\n"


class _Run:
    """Collects artifacts for one command and writes the manifest last."""

    def __init__(self, cfg, command):
        self.cfg = cfg
        self.command = command
        self.dir = Path(cfg["output_dir"])
        self.artifacts = {}
        try:
            self.dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {self.dir}: {exc.strerror}") from exc

    def write(self, name, text):
        data = text.encode("utf-8")
        (self.dir / name).write_bytes(data)
        self.artifacts[name] = hashlib.sha256(data).hexdigest()
        return self.dir / name

    def finish(self):
        manifest = {
            "command": self.command,
            "config": _public_config(self.cfg),
            "artifacts": dict(sorted(self.artifacts.items())),
        }
        (self.dir / f"manifest-{self.command}.json").write_text(_dump(manifest), encoding="utf-8")


def _timed(label, fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    print(f"  [{label}: {time.perf_counter() - t0:.3f} s]")
    return out


def _status_code(status):
    if status is Status.INFEASIBLE_SUSPECTED:
        print("solver: constraints look infeasible (multiplier diverged)", file=sys.stderr)
        return EXIT_SOLVER
    if status is Status.ITERATION_CAP:
        print("solver: warning, iteration cap reached; best iterate reported", file=sys.stderr)
    return EXIT_OK


# --- commands ----------------------------------------------------------------------


def cmd_gen(cfg):
    run = _Run(cfg, "gen")
    world, model = _timed("generate", _load_model, cfg)
    if world is None:
        raise ConfigError("gen needs a grid 'scenario'")
    run.write("mdp.json", _dump(to_dict(model.mdp)))
    run.write("pomdp.json", _dump(to_dict(model)))
    run.write("layout.csv", world.layout_csv())
    run.write("world.json", _dump(world.to_dict()))
    run.finish()
    s = world.spec
    print(f"grid {s.rows}x{s.cols}, {int(world.obstacles.sum())} obstacles, "
          f"uncertain cells {list(world.uncertain)}, {model.num_states} states")
    print(world.summary())
    return EXIT_OK


def cmd_solve_mdp(cfg):
    run = _Run(cfg, "solve-mdp")
    world, model = _load_model(cfg)
    mdp = check_mdp(model)
    measure = check_measure(cfg["measure"])
    res = _timed("solve", solve_constrained, mdp, measure, _solver_params(cfg))
    out = res.to_dict()
    out["budgets"] = mdp.budgets.tolist()
    run.write("mdp_result.json", _dump(out))
    if world is not None:
        run.write("heatmap.csv", heatmap_csv(res.value, res.policy, world))
    run.finish()
    print(f"measure {measure}: lower bound J = {res.lower_bound:.6f}, "
          f"lambda = {np.round(res.multipliers, 6).tolist()}, "
          f"constraint values = {np.round(res.constraint_values, 6).tolist()}, "
          f"status {res.status.value}")
    return _status_code(res.status)


def cmd_solve_pomdp(cfg):
    run = _Run(cfg, "solve-pomdp")
    world, model = _load_model(cfg)
    pomdp = check_pomdp(model)
    measure = check_measure(cfg["measure"])
    res = _timed("solve", policy_iteration, pomdp, measure, _pi_params(cfg))
    run.write("pomdp_result.json", _dump(res.to_dict()))
    lines = ["iteration,num_istates,lower_bound,improved,grown"]
    lines += [f"{t.iteration},{t.num_istates},{t.lower_bound!r},{int(t.improved)},{t.grown}"
              for t in res.trace]
    run.write("trace.csv", "\n".join(lines) + "\n")
    if world is not None:
        run.write("heatmap_pomdp.csv", heatmap_csv(res.value[:, res.g_init], None, world))
    run.finish()
    print(f"measure {measure}: lower bound J = {res.lower_bound:.6f}, |G| = {res.fsc.num_istates}, "
          f"lambda = {np.round(res.multipliers, 6).tolist()}, status {res.status.value}")
    return _status_code(res.status)


def _controller_from(result, model):
    """Policy array or Fsc from a solve result, checked against ``model``."""
    mdp = model.mdp if isinstance(model, Pomdp) else model
    if "policy" in result:
        pol = np.asarray(result["policy"], dtype=int)
        if pol.shape != (mdp.num_states,) or np.any((pol < 0) | (pol >= mdp.num_actions)):
            raise DimensionMismatch(f"policy has shape {pol.shape}; model has "
                                    f"{mdp.num_states} states and {mdp.num_actions} actions")
        return pol
    if "fsc" in result:
        fsc = from_dict(result["fsc"])
        if not isinstance(model, Pomdp):
            raise DimensionMismatch("a controller result needs a POMDP model")
        if fsc.num_observations != model.num_observations or fsc.num_actions != mdp.num_actions:
            raise DimensionMismatch("controller alphabet does not match the model")
        return fsc
    raise DimensionMismatch("result file holds neither a policy nor a controller")


def cmd_simulate(cfg, result_path):
    run = _Run(cfg, "simulate")
    world, model = _load_model(cfg)
    try:
        result = json.loads(Path(result_path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read result {result_path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise DimensionMismatch(f"result {result_path} is not valid JSON") from exc
    if not isinstance(result, dict):
        raise DimensionMismatch("result file must hold a JSON object")
    controller = _controller_from(result, model)
    mc = cfg["mc"]
    eps = mc["epsilon"] if mc["epsilon"] is not None else cfg["measure"].get("epsilon", 0.2)
    eps = 0.2 if cfg["measure"]["kind"] == "expectation" and mc["epsilon"] is None else eps
    n_runs, horizon, seed = int(mc["n_runs"]), int(mc["horizon"]), int(mc["master_seed"])
    if n_runs < 1 or horizon < 1:
        raise ConfigError("mc.n_runs and mc.horizon must be at least 1")
    t0 = time.perf_counter()
    if world is not None:
        summary, records = monte_carlo(world, controller, n_runs, horizon, seed,
                                       perturb=bool(mc["perturb"]), epsilon=eps, keep_records=True)
    else:
        sim_model = model if isinstance(controller, Fsc) else (
            model.mdp if isinstance(model, Pomdp) else model)
        records = [rollout(sim_model, controller, horizon, (seed, i, 1)) for i in range(n_runs)]
        summary = summarize(records, sim_model.budgets if isinstance(sim_model, Mdp)
                            else sim_model.mdp.budgets, eps)
    print(f"  [simulate: {time.perf_counter() - t0:.3f} s]")
    run.write("mc_summary.json", _dump(summary.to_dict()))
    if mc["keep_records"]:
        run.write("runs.csv", records_csv(records))
    run.finish()
    print(f"{summary.n_runs} runs: failure rate {summary.failure_rate:.4f}, mean cost "
          f"{summary.mean_cost:.4f} +/- {summary.std_error:.4f}, CVaR {summary.cvar_cost:.4f}, "
          f"EVaR {summary.evar_cost:.4f}")
    return EXIT_OK


def cmd_export_dcp(cfg):
    run = _Run(cfg, "export-dcp")
    _, model = _load_model(cfg)
    mdp = check_mdp(model)
    measure = check_measure(cfg["measure"])
    run.write("dcp.json", _dump(_timed("export", export_dcp, mdp, measure)))
    run.finish()
    print(f"wrote {run.dir / 'dcp.json'}")
    return EXIT_OK


# --- entry point ------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="riskplan", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("gen", "generate grid MDP/POMDP model files and a layout CSV"),
        ("solve-mdp", "solve the constrained risk-averse MDP"),
        ("solve-pomdp", "synthesize a finite-state controller for the POMDP"),
        ("simulate", "Monte Carlo robustness evaluation of a solve result"),
        ("export-dcp", "write the difference-of-convex program description"),
    ):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("config", help="JSON run config")
        if name == "simulate":
            sp.add_argument("result", help="mdp_result.json or pomdp_result.json")
        sp.add_argument("--seed", type=int, help="override scenario.seed")
        sp.add_argument("--epsilon", type=float, help="override measure.epsilon")
        sp.add_argument("--measure", choices=["expectation", "cvar", "evar"],
                        help="override measure.kind")
        sp.add_argument("--out", help="override output_dir")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed, args.epsilon, args.measure, args.out)
        if args.command == "gen":
            return cmd_gen(cfg)
        if args.command == "solve-mdp":
            return cmd_solve_mdp(cfg)
        if args.command == "solve-pomdp":
            return cmd_solve_pomdp(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.result)
        return cmd_export_dcp(cfg)
    except (ConfigError, NoFeasibleLayout) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DimensionMismatch, InvalidModel, ImpossibleObservation) as exc:
        print(f"input mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (IterationCap, RiskPlanError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
