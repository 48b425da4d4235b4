"""Command-line entry point: ``retailsim <subcommand> ...``.

Subcommands only parse arguments, call the library and format results;
``--json`` switches the human summary to one line of JSON.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from . import baskets, experiment, stats, torus
from .engine import SimConfig, SimulationError, load_config
from .engine import run as run_sim
from .layout import LayoutError, load_layout


class CliError(Exception):
    """Reported as ``error: <message>`` with exit code 1."""


def _emit(args, human: str, payload: dict) -> None:
    if args.json:
        print(json.dumps(payload, separators=(",", ":"), sort_keys=True))
    else:
        print(human)


def _layout(spec: str):
    try:
        path = experiment.resolve_layout_path(spec)
    except experiment.ExperimentError as exc:
        raise CliError(str(exc)) from None
    try:
        return load_layout(path)
    except LayoutError as exc:
        raise CliError(str(exc)) from None


def _float_list(text: str, n: int, what: str) -> list[float]:
    parts = text.split(",")
    if len(parts) != n:
        raise argparse.ArgumentTypeError(f"{what} needs {n} comma-separated numbers")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{what}: not a number in {text!r}") from None


def _flow(text: str) -> torus.TorusFlow:
    try:
        return torus.TorusFlow(*_float_list(text, 4, "flow"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _k_range(text: str) -> range:
    lo, sep, hi = text.partition("..")
    try:
        a, b = int(lo), int(hi if sep else lo)
    except ValueError:
        raise argparse.ArgumentTypeError("k range looks like 1..5") from None
    if not 1 <= a <= b:
        raise argparse.ArgumentTypeError("k range needs 1 <= lo <= hi")
    return range(a, b + 1)


# ----------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    layout = _layout(args.layout)
    if args.config:
        if not Path(args.config).exists():
            raise CliError(f"config not found: {args.config}")
        try:
            config = load_config(args.config)
        except (ValueError, TypeError) as exc:
            raise CliError(f"bad config {args.config}: {exc}") from None
    else:
        config = SimConfig()
    if args.seed is not None:
        config = SimConfig.from_dict({**config.to_dict(), "seed": args.seed})
    try:
        out = open(args.out, "w", encoding="utf-8", buffering=1)
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc}") from None
    with out:
        def sink(rec):
            out.write(json.dumps(rec, separators=(",", ":")) + "\n")

        try:
            res = run_sim(layout, config, sink=sink)
        except (SimulationError, ValueError, OSError) as exc:
            raise CliError(str(exc)) from None
    payload = {
        "sim_id": res.sim_id,
        "config_hash": res.config_hash,
        "collisions": res.total_collisions,
        "near_misses": res.near_misses,
        "at_risk": len(res.at_risk_agents),
        "ticks": res.ticks,
        "duration_s": res.duration,
        "half_empty_s": res.half_empty_customerwise_time,
        "truncated": res.truncated,
        "out": str(args.out),
    }
    human = (
        f"sim {res.sim_id}: collisions={res.total_collisions} near_misses={res.near_misses} "
        f"at_risk={len(res.at_risk_agents)} duration={res.duration:.1f}s"
        + (" TRUNCATED" if res.truncated else "")
        + f" -> {args.out}"
    )
    if res.inert_features:
        print("warning: flags with no effect: " + ", ".join(res.inert_features), file=sys.stderr)
    _emit(args, human, payload)
    return 0


def _job_line(j: experiment.JobAggregate) -> str:
    def num(v, fmt):
        return "n/a" if v is None else format(v, fmt)

    ss = j.sample_size
    check = {True: "ok", False: "too few", None: "n/a"}[ss["satisfied"]]
    fit = num(j.fit_p_value, ".3g") if j.fit_skipped is None else f"skipped ({j.fit_skipped})"
    params = ",".join(f"{k}={v}" for k, v in j.params.items())
    return (
        f"{j.job_id} [{params}] sims={j.n_summaries}/{j.n_sims} "
        f"collisions={num(j.collisions_mean, '.2f')}+-{num(j.collisions_std, '.2f')} "
        f"time_in_store={num(j.time_in_store_mean, '.1f')}s "
        f"lambda={num(j.lambda_hat, '.4g')}/s fit_p={fit} "
        f"sample_size={check} (need {ss['n_required']}, have {ss['replicates']})"
    )


def _aggregate_lines(rep: experiment.AggregateReport) -> list[str]:
    lines = [_job_line(j) for j in rep.jobs]
    lines.append(
        f"records={rep.n_records} orphans={len(rep.orphans)} failures={len(rep.failures)} "
        f"missing={len(rep.missing)} problems={len(rep.problems)}"
    )
    lines.extend(f"problem: {p}" for p in rep.problems)
    return lines


def cmd_experiment(args) -> int:
    try:
        manifest = experiment.load_manifest(args.manifest)
        jobs = experiment.expand(manifest)
    except (experiment.ExperimentError, ValueError) as exc:
        raise CliError(str(exc)) from None
    try:
        ex = experiment.execute(
            manifest, jobs, args.parallelism, progress=None if args.quiet else experiment._stderr_progress
        )
    except experiment.ExperimentError as exc:
        raise CliError(str(exc)) from None
    agg = experiment.aggregate(manifest.experiment_dir)
    payload = {
        "experiment_id": manifest.experiment_id,
        "sims": len(ex.outcomes),
        "failed": len(ex.failed),
        "truncated": len(ex.truncated),
        "wall_time_s": ex.wall_time,
        "aggregate": agg.to_dict(),
    }
    human = "\n".join(
        [f"experiment {manifest.experiment_id}: {len(ex.outcomes)} sims, {len(ex.failed)} failed, "
         f"{len(ex.truncated)} truncated, {ex.wall_time:.1f}s"]
        + [f"failed {o.sim_id}: {o.error}" for o in ex.failed]
        + _aggregate_lines(agg)
    )
    _emit(args, human, payload)
    return ex.exit_code


def cmd_analyze(args) -> int:
    sink = Path(args.sink)
    if not sink.is_dir():
        raise CliError(f"sink not found: {sink}")
    rep = experiment.aggregate(sink, merge=not args.no_merge)
    if rep.n_records == 0 and not rep.jobs:
        raise CliError("no records")
    _emit(args, "\n".join(_aggregate_lines(rep)), rep.to_dict())
    clean = not (rep.orphans or rep.problems or rep.missing)
    return experiment.EXIT_OK if clean else experiment.EXIT_PARTIAL


def cmd_cluster(args) -> int:
    layout = _layout(args.layout) if args.layout else None
    try:
        trans = baskets.read_transactions(args.transactions)
    except FileNotFoundError:
        raise CliError(f"transactions not found: {args.transactions}") from None
    except baskets.BasketError as exc:
        raise CliError(str(exc)) from None
    try:
        matrix = baskets.build_matrix(trans)
        table = {}
        k = args.k
        if k is None:
            k, table = baskets.select_k(matrix, args.k_range, seed=args.seed, features=args.features)
        result = baskets.cluster(matrix, k, seed=args.seed, features=args.features, layout=layout)
    except (baskets.BasketError, ValueError) as exc:
        raise CliError(str(exc)) from None
    if table:
        result.bic_table = table
    if args.out:
        baskets.write_report(result, args.out)
    human = "\n".join(
        [f"k={result.k} bic={result.bic:.2f} customers={matrix.n_customers}"]
        + [
            f"cluster {c.id}: weight={c.weight:.3f} products={' '.join(c.archetype_products) or '-'} "
            f"bays={' '.join(c.bay_sequence) or '-'}"
            for c in result.clusters
        ]
    )
    _emit(args, human, result.to_dict())
    return 0


def cmd_samplesize(args) -> int:
    try:
        if args.z is not None:
            z = args.z
        else:
            z = stats.z_from_alpha(args.alpha)
        sigma = args.sigma if args.sigma is not None else stats.sigma_from_range(args.range)
        params = stats.SampleSizeParams(z=z, sigma=sigma, l=args.halfwidth, population=args.population)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    n_raw, n = stats.min_samples(params)
    payload = {"z": z, "sigma": sigma, "halfwidth": args.halfwidth,
               "population": args.population, "n_raw": n_raw, "n": n}
    _emit(args, f"{n_raw:.4f} → {n}", payload)
    return 0


def _fraction_text(approx) -> str:
    p, q = approx
    return f"{p}/{q}"


def cmd_torus(args) -> int:
    try:
        if args.subop == "rotation":
            if args.c is not None:
                shift = args.c
            else:
                if args.q == 0:
                    raise ValueError("q must be non-zero")
                shift = args.p / args.q
            rn = torus.rotation_number(torus.rigid_rotation(shift), n_iter=args.iterations, tol=args.tol)
            kind = rn.classification.value
            if rn.rational_approx is not None:
                human = f"alpha={_fraction_text(rn.rational_approx)} {kind} period={rn.period}"
            else:
                human = f"alpha={rn.alpha:.10f} {kind}"
            payload = {"alpha": rn.alpha, "rational": rn.rational_approx, "kind": kind, "period": rn.period}
        elif args.subop == "embed":
            g = torus.TorusGeometry(args.R, args.r)
            p = torus.wrap(args.x, args.y) if args.plane else torus.TorusPoint(args.x, args.y)
            xyz = torus.embed(g, p)
            res = torus.torus_residual(g, xyz)
            human = f"theta={p.theta:.6f} phi={p.phi:.6f} -> x={xyz[0]:.6f} y={xyz[1]:.6f} z={xyz[2]:.6f}"
            payload = {"theta": p.theta, "phi": p.phi, "xyz": list(xyz), "residual": res}
        elif args.subop == "flow":
            g = torus.TorusGeometry(args.R, args.r)
            xyz = torus.flow_position(g, args.flow, args.t)
            pt = torus.flow_point(args.flow, args.t)
            human = f"t={args.t} theta={pt.theta:.6f} phi={pt.phi:.6f} -> x={xyz[0]:.6f} y={xyz[1]:.6f} z={xyz[2]:.6f}"
            payload = {"t": args.t, "theta": pt.theta, "phi": pt.phi, "xyz": list(xyz)}
        else:  # intersect
            g = torus.TorusGeometry(args.R, args.r)
            rep = torus.count_intersections(g, args.a, args.b, args.t0, args.t1, args.dt, args.radius)
            human = "\n".join(
                [f"intersections={rep.count}"]
                + [f"  t=[{e.start:.4f}, {e.end:.4f}] closest t={e.closest:.4f} d={e.distance:.6f}"
                   for e in rep.events]
            )
            payload = {
                "count": rep.count,
                "events": [
                    {"start": e.start, "end": e.end, "closest": e.closest, "distance": e.distance,
                     "theta": e.point.theta, "phi": e.point.phi}
                    for e in rep.events
                ],
            }
    except ValueError as exc:
        raise CliError(str(exc)) from None
    _emit(args, human, payload)
    return 0


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="print the summary as one line of JSON")

    parser = argparse.ArgumentParser(prog="retailsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("simulate", parents=[common], help="run one simulation",
                       description="Run one simulation and write its JSONL records.")
    p.add_argument("--layout", required=True, help="layout JSON file or bundled layout name")
    p.add_argument("--config", help="SimConfig JSON file (default: built-in defaults)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("experiment", parents=[common], help="run an experiment manifest",
                       description="Expand a manifest, run every simulation and aggregate.")
    p.add_argument("--manifest", required=True)
    p.add_argument("--parallelism", type=int, help="override the manifest's worker count")
    p.add_argument("--quiet", action="store_true", help="no progress lines")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("analyze", parents=[common], help="aggregate and check a sink directory",
                       description="Aggregate a sink directory and check record lineage.")
    p.add_argument("--sink", required=True)
    p.add_argument("--no-merge", action="store_true", help="skip writing merged.jsonl")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("cluster", parents=[common], help="cluster basket transactions",
                       description="Cluster customers by basket and report journey archetypes.")
    p.add_argument("--transactions", required=True, help="CSV customer_id,product_id or JSONL")
    p.add_argument("--layout", help="layout for bay sequences")
    kg = p.add_mutually_exclusive_group()
    kg.add_argument("--k", type=int)
    kg.add_argument("--k-range", type=_k_range, default=range(1, 6), help="e.g. 1..5 (default)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--features", choices=("similarity", "raw"), default="similarity")
    p.add_argument("--out", help="write the cluster report JSON here")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("samplesize", parents=[common], help="required number of replicates",
                       description="Replicates needed for a confidence interval of given half-width.")
    zg = p.add_mutually_exclusive_group(required=True)
    zg.add_argument("--alpha", type=float)
    zg.add_argument("--z", type=float)
    sg = p.add_mutually_exclusive_group(required=True)
    sg.add_argument("--sigma", type=float)
    sg.add_argument("--range", type=float, help="population range; sigma = range/6")
    p.add_argument("--halfwidth", type=float, required=True)
    p.add_argument("--population", type=int, help="finite population size N")
    p.set_defaults(func=cmd_samplesize)

    p = sub.add_parser("torus", help="torus geometry and circle-map tools",
                       description="Torus geometry and circle-map tools.")
    tsub = p.add_subparsers(dest="subop", required=True, metavar="SUBOP")
    geo = argparse.ArgumentParser(add_help=False)
    geo.add_argument("--R", type=float, default=2.0, help="major radius")
    geo.add_argument("--r", type=float, default=1.0, help="minor radius")

    t = tsub.add_parser("rotation", parents=[common], help="rotation number of a rigid rotation")
    t.add_argument("--p", type=int, default=None)
    t.add_argument("--q", type=int, default=None)
    t.add_argument("--c", type=float, help="rotation amount (instead of --p/--q)")
    t.add_argument("--iterations", type=int, default=100_000)
    t.add_argument("--tol", type=float, default=1e-6)

    t = tsub.add_parser("embed", parents=[common, geo], help="embed an angle pair in 3-D")
    t.add_argument("--x", type=float, required=True, help="theta (or plane x with --plane)")
    t.add_argument("--y", type=float, required=True, help="phi (or plane y with --plane)")
    t.add_argument("--plane", action="store_true", help="wrap a plane point first")

    t = tsub.add_parser("flow", parents=[common, geo], help="position of a linear flow")
    t.add_argument("--flow", type=_flow, required=True, help="x0,y0,lam,mu")
    t.add_argument("--t", type=float, required=True)

    t = tsub.add_parser("intersect", parents=[common, geo], help="close approaches of two flows")
    t.add_argument("--a", type=_flow, required=True, help="x0,y0,lam,mu")
    t.add_argument("--b", type=_flow, required=True, help="x0,y0,lam,mu")
    t.add_argument("--t0", type=float, default=0.0)
    t.add_argument("--t1", type=float, required=True)
    t.add_argument("--dt", type=float, default=0.01)
    t.add_argument("--radius", type=float, required=True)
    p.set_defaults(func=cmd_torus)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "torus" and args.subop == "rotation":
        if args.c is None and (args.p is None or args.q is None):
            parser.error("torus rotation needs --p and --q, or --c")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return experiment.EXIT_FATAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
