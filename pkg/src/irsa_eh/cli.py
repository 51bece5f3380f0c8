"""Command-line entry point: ``irsa-eh {analyze,simulate,sweep,optimize}``.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass

import numpy as np

from . import analysis, energy_chain
from .metrics import (
    NoEstimateError,
    SimulationReport,
    empirical_average_aoi,
    empirical_avp,
    empirical_battery_distribution,
    estimate_plr,
    empirical_throughput,
)
from .model import ConfigError, DegreeDistribution, SystemConfig, load_config
from .optimize import OptimizationProblem, baseline_distribution, optimize_degree_distribution
from .sim import DEFAULT_WARMUP, Scheme, run_simulation

CSV_COLUMNS = ("alphaU", "G", "scheme", "plr", "throughput", "avg_aoi_norm", "avp_theta", "plr_lower_bound",
               "seed", "frames")
SWEEP_VARS = ("alphaU", "E", "etaM", "M")


@dataclass(frozen=True)
class RunSpec:
    command: str
    config: SystemConfig
    dist: DegreeDistribution | None
    scheme: Scheme
    seed: int
    frames: int
    warmup: int
    theta: float
    objective: str
    out: str | None
    jobs: int
    sweep_var: str | None = None
    grid: tuple = ()
    optimize: bool = False
    restarts: int = 10
    adaptive: bool = False
    final_frames: int = 100_000
    energy_model: str = "frame_cap"
    report: str | None = None
    phi_from: str | None = None
    plr: float | None = None


def default_distribution(config: SystemConfig, scheme: Scheme) -> DegreeDistribution:
    """x^min(b,3) per battery level for AVOID, x^min(3, max_degree) otherwise."""
    return baseline_distribution(config, scheme)


def resolve_distribution(spec: RunSpec, config: SystemConfig) -> DegreeDistribution:
    dist = spec.dist
    if dist is None or (dist.adaptive and dist.num_rows != config.num_battery_levels):
        return default_distribution(config, spec.scheme)
    return dist


def apply_sweep(config: SystemConfig, var: str, value) -> SystemConfig:
    """Config at one grid point. ``M`` keeps the per-slot update and harvest probabilities."""
    if var == "alphaU":
        return config.replace(update_prob=float(value) / config.num_devices)
    if var == "E":
        return config.replace(battery_capacity=int(value))
    if var == "etaM":
        return config.replace(harvest_prob=float(value) / config.frame_length)
    if var == "M":
        return config.replace(frame_length=int(value))
    raise ConfigError(f"unknown sweep variable {var!r}; expected one of {', '.join(SWEEP_VARS)}")


def parse_sweep(text: str):
    if "=" not in text:
        raise ConfigError(f"--sweep expects var=v1,v2,..., got {text!r}")
    var, grid = text.split("=", 1)
    var = var.strip()
    if var not in SWEEP_VARS:
        raise ConfigError(f"unknown sweep variable {var!r}; expected one of {', '.join(SWEEP_VARS)}")
    try:
        values = [float(v) for v in grid.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad sweep grid {grid!r}") from None
    if not values:
        raise ConfigError("sweep grid is empty")
    if values != sorted(values):
        raise ConfigError("sweep grid must be sorted")
    if var in ("E", "M"):
        if any(v != int(v) for v in values):
            raise ConfigError(f"sweep over {var} needs integer values")
        values = [int(v) for v in values]
    return var, tuple(values)


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "nan"
    return f"{value:.6g}"


def _csv_text(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def _emit(text: str, path: str | None):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _dump_json(doc) -> str:
    # inf/nan are written as strings so the document stays valid JSON
    def clean(x):
        if isinstance(x, float) and not math.isfinite(x):
            return str(x)
        if isinstance(x, dict):
            return {k: clean(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [clean(v) for v in x]
        return x

    return json.dumps(clean(json.loads(json.dumps(doc, default=_json_default))), indent=2) + "\n"


# --------------------------------------------------------------------------
# simulate


def lower_bound_for(config, dist, scheme: Scheme, report: SimulationReport | None) -> float:
    """Fully-dropped-packet bound; AVOID uses the analytic chain, IDENTIFY the run's battery histogram."""
    if scheme is Scheme.UNLIMITED or config.unlimited:
        return 0.0
    if scheme is Scheme.AVOID:
        phi = energy_chain.battery_chain(config, dist).steady_state
    else:
        if report is None or report.frames == 0:
            return math.nan
        phi = empirical_battery_distribution(report)
    return analysis.plr_lower_bound(config, dist.row(0), float(phi[0]))


def simulate_row(config, dist, scheme: Scheme, frames, warmup, seed, theta, energy_model="frame_cap"):
    report = run_simulation(config, dist, scheme, frames, warmup, seed, theta=theta, energy_model=energy_model)
    row = {
        "alphaU": config.update_prob * config.num_devices,
        "G": config.load,
        "scheme": scheme.value,
        "seed": seed,
        "frames": frames,
    }
    try:
        row["plr"] = estimate_plr(report)
    except NoEstimateError:
        row["plr"] = math.nan
    for key, fn in (("throughput", empirical_throughput),
                    ("avg_aoi_norm", lambda r: empirical_average_aoi(r) / config.num_devices),
                    ("avp_theta", lambda r: empirical_avp(r, theta))):
        try:
            row[key] = fn(report)
        except NoEstimateError:
            row[key] = math.nan
    row["plr_lower_bound"] = lower_bound_for(config, dist, scheme, report)
    return row, report


def cmd_simulate(spec: RunSpec) -> int:
    config = spec.config
    dist = resolve_distribution(spec, config)
    row, report = simulate_row(config, dist, spec.scheme, spec.frames, spec.warmup, spec.seed, spec.theta,
                               spec.energy_model)
    _emit(_csv_text([row] if spec.frames > 0 else []), spec.out)
    if spec.report:
        _emit(_dump_json(report.to_dict()), spec.report)
    return 0


# --------------------------------------------------------------------------
# sweep


def _sweep_point(args):
    spec, value = args
    config = apply_sweep(spec.config, spec.sweep_var, value)
    dist = resolve_distribution(spec, config)
    if spec.optimize:
        problem = OptimizationProblem(spec.objective, spec.scheme, spec.adaptive, spec.frames, spec.restarts,
                                      spec.seed, spec.theta, spec.warmup, spec.final_frames,
                                      energy_model=spec.energy_model)
        dist = optimize_degree_distribution(config, problem).distribution
    row, _ = simulate_row(config, dist, spec.scheme, spec.frames, spec.warmup, spec.seed, spec.theta,
                          spec.energy_model)
    return row


def cmd_sweep(spec: RunSpec) -> int:
    tasks = [(spec, v) for v in spec.grid]
    rows = []
    failure = None
    if spec.jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(spec.jobs) as pool:
            futures = [pool.submit(_sweep_point, t) for t in tasks]
            for fut in futures:
                try:
                    rows.append(fut.result())
                except Exception as exc:  # keep the completed prefix
                    failure = exc
                    break
    else:
        for t in tasks:
            try:
                rows.append(_sweep_point(t))
            except Exception as exc:
                failure = exc
                break
    _emit(_csv_text(rows), spec.out)
    if failure is not None:
        raise failure
    return 0


# --------------------------------------------------------------------------
# analyze


def cmd_analyze(spec: RunSpec) -> int:
    config = spec.config
    dist = resolve_distribution(spec, config)
    doc = {
        "alphaU": config.update_prob * config.num_devices,
        "sigma": config.sigma,
        "G": config.load,
        "scheme": spec.scheme.value,
    }
    phi = None
    if not config.unlimited and spec.scheme is not Scheme.UNLIMITED:
        if spec.scheme is Scheme.AVOID:
            chain = energy_chain.battery_chain(config, dist)
            doc["transition_matrix"] = chain.transition
            phi = chain.steady_state
            doc["phi_source"] = "balance equations"
        elif spec.phi_from:
            with open(spec.phi_from) as fh:
                report = SimulationReport.from_json(fh.read())
            phi = empirical_battery_distribution(report)
            doc["phi_source"] = f"empirical ({spec.phi_from})"
        else:
            raise ConfigError("IDENTIFY has no closed-form battery distribution; pass --phi-from <report.json> "
                              "from a prior simulate run")
        doc["phi"] = phi
        doc["average_degree_distribution"] = energy_chain.average_degree_distribution(phi, dist)
        doc["plr_lower_bound"] = analysis.plr_lower_bound(config, dist.row(0), float(phi[0]))
    if spec.plr is not None:
        inputs = analysis.AoiInputs.from_config(config, spec.plr)
        aoi = analysis.average_aoi(inputs)
        doc["plr"] = spec.plr
        doc["avg_aoi"] = aoi
        doc["avg_aoi_norm"] = aoi / config.num_devices
        doc["theta"] = spec.theta
        doc["avp_theta"] = analysis.aoi_violation_prob(spec.theta, inputs)
        doc["throughput"] = analysis.throughput(config.load, spec.plr)
    _emit(_dump_json(doc), spec.out)
    return 0


# --------------------------------------------------------------------------
# optimize


def cmd_optimize(spec: RunSpec) -> int:
    config = spec.config
    problem = OptimizationProblem(spec.objective, spec.scheme, spec.adaptive, spec.frames, spec.restarts,
                                  spec.seed, spec.theta, spec.warmup, spec.final_frames,
                                  energy_model=spec.energy_model)
    result = optimize_degree_distribution(config, problem, jobs=spec.jobs)
    doc = {
        "scheme": spec.scheme.value,
        "objective": spec.objective,
        "theta": spec.theta if spec.objective == "avp" else None,
        "adaptive": result.distribution.adaptive,
        "degree_table": result.distribution.table,
        "search_value": result.value,
        "baseline_value": result.baseline_value,
        "final_value": result.final_value,
        "final_value_norm": result.normalized(config),
        "final_plr": result.final_plr,
        "frames_per_call": spec.frames,
        "final_frames": spec.final_frames,
        "seed": spec.seed,
        "evaluations": result.evaluations,
        "restarts": [
            {"start": r.start, "value": r.value, "evaluations": r.evaluations, "degree_table": r.table}
            for r in result.restarts
        ],
    }
    _emit(_dump_json(doc), spec.out)
    return 0


# --------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="irsa-eh", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, frames_default):
        p.add_argument("--config", required=True, help="scenario file (key = value lines)")
        p.add_argument("--scheme", default="identify", help="avoid, identify or unlimited")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--frames", type=int, default=frames_default)
        p.add_argument("--warmup", type=int, default=DEFAULT_WARMUP)
        p.add_argument("--theta", type=float, default=10_000.0, help="AoI threshold in slots")
        p.add_argument("--objective", default="aoi", choices=["aoi", "avp", "throughput"])
        p.add_argument("--out", help="output path (default stdout)")
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--energy-model", default="frame_cap", choices=["frame_cap", "slot_cap"])

    p = sub.add_parser("analyze", help="closed-form quantities")
    common(p, 0)
    p.add_argument("--phi-from", help="simulate report (JSON) supplying the battery distribution")
    p.add_argument("--plr", type=float, help="PLR at which to evaluate the AoI formulas")

    p = sub.add_parser("simulate", help="one Monte-Carlo run, CSV row")
    common(p, 100_000)
    p.add_argument("--report", help="write the full JSON report here")

    p = sub.add_parser("sweep", help="one CSV row per grid point")
    common(p, 100_000)
    p.add_argument("--sweep", required=True, help="var=v1,v2,... with var in alphaU, E, etaM, M")
    p.add_argument("--optimize", action="store_true", help="optimize the degree table at each point first")
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--adaptive", action="store_true")
    p.add_argument("--final-frames", type=int, default=100_000)

    p = sub.add_parser("optimize", help="degree-table search, JSON result")
    common(p, 20_000)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--adaptive", action="store_true")
    p.add_argument("--final-frames", type=int, default=100_000)
    return parser


def make_spec(args) -> RunSpec:
    config, dist = load_config(args.config)
    scheme = Scheme.parse(args.scheme)
    if args.frames < 0 or args.warmup < 0:
        raise ConfigError("--frames and --warmup must be nonnegative")
    if args.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    sweep_var, grid = (None, ())
    if getattr(args, "sweep", None):
        sweep_var, grid = parse_sweep(args.sweep)
    return RunSpec(
        command=args.command,
        config=config,
        dist=dist,
        scheme=scheme,
        seed=args.seed,
        frames=args.frames,
        warmup=args.warmup,
        theta=args.theta,
        objective=args.objective,
        out=args.out,
        jobs=args.jobs,
        sweep_var=sweep_var,
        grid=grid,
        optimize=getattr(args, "optimize", False),
        restarts=getattr(args, "restarts", 10),
        adaptive=getattr(args, "adaptive", False),
        final_frames=getattr(args, "final_frames", 100_000),
        energy_model=args.energy_model,
        report=getattr(args, "report", None),
        phi_from=getattr(args, "phi_from", None),
        plr=getattr(args, "plr", None),
    )


COMMANDS = {"analyze": cmd_analyze, "simulate": cmd_simulate, "sweep": cmd_sweep, "optimize": cmd_optimize}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        spec = make_spec(args)
        return COMMANDS[spec.command](spec)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any failure past validation is a runtime error
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
